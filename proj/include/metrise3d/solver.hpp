#pragma once

// Decision procedure: gates on V and Q, the pencil in normal form, the
// scalars phi and psi, the candidate sigma_hat, the scale test on
// omega_a = sigma_hat_{bc} (nabla_a sigma_hat^{bc})_o, reconstruction of the
// scale h, and the metric g_ab = (h sigma_hat)_ab / det_eps(h sigma_hat).

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "metrise3d/expr.hpp"
#include "metrise3d/jet.hpp"
#include "metrise3d/pencil.hpp"
#include "metrise3d/projective.hpp"
#include "metrise3d/tensor.hpp"

namespace metrise3d {

inline constexpr int kDefaultOrder = 4;
inline constexpr double kDefaultTol = 1e-9;
inline constexpr double kFinalResidualTol = 1e-8;
inline constexpr double kQuadratureTol = 1e-10;

/// Smooth rescaling (a, b, c) applied as rho -> a rho, sigma -> b sigma,
/// xi -> c xi after the pencil is normalized.  The verdict must not depend on it.
using GaugeFactors = std::function<std::array<Jet, 3>(const Point&, int order)>;

struct SolverOptions {
  int order = kDefaultOrder;
  double tol = kDefaultTol;
  double final_tol = kFinalResidualTol;
  double probe_half_width = 0.25;
  std::vector<Point> metric_points;  // base point is always included
  GaugeFactors gauge;
};

enum class NotMetrisableReason {
  QNonzero,
  PencilEntirelyDegenerate,
  SingularCandidate,
  OmegaNotExact,
  FinalResidual,
};

enum class IndeterminateReason {
  IrregularPencil,
  PhiPsiBothZero,
  NumericalDegeneracy,
};

inline const char* to_string(NotMetrisableReason r) {
  switch (r) {
    case NotMetrisableReason::QNonzero: return "QNonzero";
    case NotMetrisableReason::PencilEntirelyDegenerate: return "PencilEntirelyDegenerate";
    case NotMetrisableReason::SingularCandidate: return "SingularCandidate";
    case NotMetrisableReason::OmegaNotExact: return "OmegaNotExact";
    case NotMetrisableReason::FinalResidual: return "FinalResidual";
  }
  return "?";
}

inline const char* to_string(IndeterminateReason r) {
  switch (r) {
    case IndeterminateReason::IrregularPencil: return "IrregularPencil";
    case IndeterminateReason::PhiPsiBothZero: return "PhiPsiBothZero";
    case IndeterminateReason::NumericalDegeneracy: return "NumericalDegeneracy";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// phi, psi and the candidate

struct PhiPsi {
  Jet phi;
  Jet psi;
  double phi_scale = 0;  // sum of |P_bc| |xi^a| |D_a^{bc}| at the base point
  double psi_scale = 0;
};

namespace detail {

/// P_{bc} xi^a D_a^{bc} and the matching absolute-term scale.
inline std::pair<Jet, double> contract_p(const Sym2Cov<Jet>& pmat, const Vector<Jet>& xi_up,
                                         const Tensor3Mixed<Jet>& d) {
  Jet s;
  double scale = 0;
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 3; ++a) {
        s += pmat(b, c) * xi_up[a] * d(b, c, a);
        scale += std::abs(pmat(b, c).value() * xi_up[a].value() * d(b, c, a).value());
      }
  return {s, scale};
}

}  // namespace detail

/// phi = P_{bc} xi^a (nabla_a rho^{bc})_o and psi = P_{bc} xi^a (nabla_a sigma^{bc})_o
/// with P_{bc} = |xi|^2 sigma_{bc} - 5 xi_b xi_c and xi^a = sigma^{ab} xi_b.
/// Results have one order less than the frame.
inline PhiPsi compute_phi_psi(const PencilFrame& f, const Connection<Jet>& gamma) {
  const int k = f.order() - 1;
  if (k < 0) throw PipelineError("phi/psi need a pencil frame of order >= 1");
  const Tensor3Mixed<Jet> drho = tracefree_project(covariant_derivative(gamma, f.rho));
  const Tensor3Mixed<Jet> dsig = tracefree_project(covariant_derivative(gamma, f.sigma));
  const Sym2Contra<Jet> sig = truncate(f.sigma, k);
  const Sym2Cov<Jet> sig_low = inverse(sig);
  const Covector<Jet> xi = truncate(f.xi, k);
  const Vector<Jet> xi_up = contract(sig, xi);
  const Jet norm2 = contract(xi_up, xi);
  Sym2Cov<Jet> pmat;
  for (const auto& [b, c] : kSymPairs) pmat(b, c) = norm2 * sig_low(b, c) - xi[b] * xi[c] * 5.0;
  PhiPsi out;
  std::tie(out.phi, out.phi_scale) = detail::contract_p(pmat, xi_up, drho);
  std::tie(out.psi, out.psi_scale) = detail::contract_p(pmat, xi_up, dsig);
  return out;
}

enum class CandidateStatus { Ok, Singular, PhiPsiBothZero, PhiZero };

struct Candidate {
  CandidateStatus status = CandidateStatus::Ok;
  Sym2Contra<Jet> sigma_hat;   // sigma - (psi/phi) rho, order of phi
  Jet ratio;                   // psi / phi
  double det_relative = 0;     // |det sigma_hat| / |sigma_hat|_F^3
};

/// sigma - (psi / phi) rho where phi != 0.  phi == 0 with psi != 0 forces the
/// solution to be a multiple of rho, which is singular.
inline Candidate candidate(const PencilFrame& f, const PhiPsi& pp, double tol = kDefaultTol) {
  Candidate c;
  const bool phi_zero = std::abs(pp.phi.value()) <= tol * pp.phi_scale || pp.phi_scale == 0.0;
  const bool psi_zero = std::abs(pp.psi.value()) <= tol * pp.psi_scale || pp.psi_scale == 0.0;
  if (phi_zero && psi_zero) {
    c.status = CandidateStatus::PhiPsiBothZero;
    return c;
  }
  if (phi_zero) {
    c.status = CandidateStatus::PhiZero;
    return c;
  }
  const int k = pp.phi.order();
  c.ratio = pp.psi / pp.phi;
  c.sigma_hat = truncate(f.sigma, k) - truncate(f.rho, k) * c.ratio;
  const auto v = values(c.sigma_hat);
  const double fn = std::sqrt(frobenius2_value(v));
  c.det_relative = fn > 0 ? std::abs(det(v)) / (fn * fn * fn) : 0.0;
  if (c.det_relative <= tol) c.status = CandidateStatus::Singular;
  return c;
}

// ---------------------------------------------------------------------------
// omega, exactness and the final residual

/// omega_a = sigma_{bc} (nabla_a sigma^{bc})_o, one order below sigma.
inline Covector<Jet> omega_of(const Sym2Contra<Jet>& sigma, const Connection<Jet>& gamma) {
  const Tensor3Mixed<Jet> d = tracefree_project(covariant_derivative(gamma, sigma));
  const int k = sigma.c[0].order() - 1;
  return contract_pair(inverse(truncate(sigma, k)), d);
}

/// max_{a<b} |d_a omega_b - d_b omega_a| and max |d_a omega_b| (scale).
inline std::pair<double, double> exactness_residual(const Covector<Jet>& omega) {
  if (omega[0].order() < 1) throw PipelineError("exactness test needs omega of order >= 1");
  double r = 0, s = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      s = std::max(s, std::abs(derivative(omega[b], a).value()));
      if (a < b)
        r = std::max(r, std::abs(derivative(omega[b], a).value() - derivative(omega[a], b).value()));
    }
  return {r, s};
}

/// max |(nabla_a sigma^{bc} - (2/5) omega_a sigma^{bc})_o| at the base point,
/// relative to max(|nabla sigma|, |(2/5) omega sigma|).
inline std::pair<double, double> final_residual_at(const Sym2Contra<Jet>& sigma,
                                                   const Connection<Jet>& gamma) {
  const Tensor3Mixed<Jet> d = covariant_derivative(gamma, sigma);
  const Covector<Jet> w = omega_of(sigma, gamma);
  const int k = w[0].order();
  const Tensor3Mixed<Jet> ws = tensor_product(w, truncate(sigma, k)) ;
  Tensor3Mixed<Jet> diff = d;
  Tensor3Mixed<Jet> scaled = ws;
  scaled *= 0.4;
  diff -= scaled;
  const Tensor3Mixed<Jet> tf = tracefree_project(diff);
  const double abs = max_abs_value(values(tf));
  const double ref = std::max(max_abs_value(values(d)), max_abs_value(values(scaled)));
  return {abs, ref > 0 ? abs / ref : abs};
}

// ---------------------------------------------------------------------------
// Scale test over a set of probe points

/// sigma_hat (order >= 2) and the normalized connection at one point.
struct ScaleField {
  Sym2Contra<Jet> sigma_hat;
  Connection<Jet> gamma;
};

/// Returns nullopt where the point lies outside the regular domain.
using ScaleFieldAccessor = std::function<std::optional<ScaleField>(const Point&)>;

struct ScaleSample {
  Point point{};
  Covector<Jet> omega;
  double exactness = 0;
  double exactness_scale = 0;
  double final_residual = 0;      // absolute
  double final_relative = 0;
};

struct ScaleTestResult {
  bool exact = true;
  bool final_ok = true;
  std::vector<ScaleSample> samples;
  std::vector<Point> skipped;
  double max_exactness = 0;
  double max_final_relative = 0;
};

/// Evaluates omega at each probe and checks d omega = 0 and the final
/// residual.  Exact means |d omega| <= tol * max(1, |d omega| scale).
inline ScaleTestResult scale_test(const ScaleFieldAccessor& field,
                                  const std::vector<Point>& probes,
                                  double tol = kDefaultTol,
                                  double final_tol = kFinalResidualTol) {
  ScaleTestResult out;
  for (const Point& q : probes) {
    const std::optional<ScaleField> f = field(q);
    if (!f) {
      out.skipped.push_back(q);
      continue;
    }
    ScaleSample s;
    s.point = q;
    s.omega = omega_of(f->sigma_hat, f->gamma);
    std::tie(s.exactness, s.exactness_scale) = exactness_residual(s.omega);
    std::tie(s.final_residual, s.final_relative) = final_residual_at(f->sigma_hat, f->gamma);
    if (s.exactness > tol * std::max(1.0, s.exactness_scale)) out.exact = false;
    if (s.final_relative > final_tol) out.final_ok = false;
    out.max_exactness = std::max(out.max_exactness, s.exactness);
    out.max_final_relative = std::max(out.max_final_relative, s.final_relative);
    out.samples.push_back(std::move(s));
  }
  return out;
}

/// The base point and the 8 vertices of the cube of half-width w around it.
inline std::vector<Point> probe_points(const Point& p, double w) {
  std::vector<Point> pts{p};
  for (int m = 0; m < 8; ++m)
    pts.push_back({p[0] + ((m & 1) ? w : -w), p[1] + ((m & 2) ? w : -w),
                   p[2] + ((m & 4) ? w : -w)});
  return pts;
}

/// h(q) / h(p) = exp(-(2/5) int_p^q omega) along the straight segment, by
/// adaptive Gauss-Kronrod quadrature.  Throws when the error estimate
/// exceeds kQuadratureTol.
inline double reconstruct_h(const std::function<Covector<double>(const Point&)>& omega,
                            const Point& p, const Point& q) {
  const std::array<double, 3> d = {q[0] - p[0], q[1] - p[1], q[2] - p[2]};
  if (d[0] == 0 && d[1] == 0 && d[2] == 0) return 1.0;
  auto integrand = [&](double t) {
    const Point x = {p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]};
    const Covector<double> w = omega(x);
    return w[0] * d[0] + w[1] * d[1] + w[2] * d[2];
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
  double error = 0, l1 = 0;
  double integral = GK::integrate(integrand, 0.0, 1.0, 0, 0.0, &error, &l1);
  if (error > 0.01 * kQuadratureTol) {
    // Boost's tolerance is relative to the L1 norm; aim well under the
    // absolute target without chasing the noise floor of the integrand.
    const double rel = std::clamp(0.01 * kQuadratureTol / std::max(l1, 1e-300), 1e-14, 1e-3);
    integral = GK::integrate(integrand, 0.0, 1.0, 8, rel, &error, &l1);
  }
  if (!(error <= kQuadratureTol))
    throw PipelineError("scale quadrature did not converge (error " + std::to_string(error) + ")");
  return std::exp(-0.4 * integral);
}

/// g_ab = s_ab / det_eps(s) for s = h sigma_hat, so g scales as h^-4.
inline Sym2Cov<double> metric_from(const Sym2Contra<double>& sigma_hat, double h,
                                   const Epsilon<double>& eps) {
  const Sym2Contra<double> s = sigma_hat * h;
  return inverse(s) * (1.0 / det_epsilon(s, eps));
}

// ---------------------------------------------------------------------------
// Per-point analysis

enum class PointGate {
  ProjectivelyFlat,
  QNonzero,
  EntirelyDegenerate,
  Irregular,
  Pencil,
};

inline const char* to_string(PointGate g) {
  switch (g) {
    case PointGate::ProjectivelyFlat: return "ProjectivelyFlat";
    case PointGate::QNonzero: return "QNonzero";
    case PointGate::EntirelyDegenerate: return "EntirelyDegenerate";
    case PointGate::Irregular: return "Irregular";
    case PointGate::Pencil: return "Pencil";
  }
  return "?";
}

struct PointAnalysis {
  PointFrame frame;
  PointGate gate = PointGate::Pencil;
  double v_norm = 0;
  double v_threshold = 0;
  double q_norm = 0;
  double q_threshold = 0;
  std::optional<PencilSpan> span;
  std::optional<BinaryCubic> cubic;
  double discriminant = 0;
  std::vector<PencilFrame> branches;
  std::vector<std::string> notes;
};

/// Gates on V, Q and the characteristic cubic, given V, Q and epsilon at a
/// point.  Shared by the full pipeline and by synthetic harnesses.
inline PointGate gate_point(const Tensor3Mixed<Jet>& v, const Tensor3MixedLower<Jet>& q,
                            const Epsilon<Jet>& eps, double gamma_scale, double tol,
                            PointAnalysis& out) {
  const double s = std::max(gamma_scale, 1e-300);
  out.v_norm = max_abs_value(values(v));
  out.v_threshold = tol * std::max(s, s * s);
  if (out.v_norm <= out.v_threshold) return PointGate::ProjectivelyFlat;
  out.q_norm = max_abs_value(values(q));
  out.q_threshold = tol * out.v_norm * out.v_norm;
  if (out.q_norm > out.q_threshold) return PointGate::QNonzero;
  out.span = extract_pencil(v, eps, tol);
  out.cubic = characteristic_cubic(out.span->rho_raw, out.span->sigma_raw);
  out.discriminant = discriminant(*out.cubic);
  if (identically_zero(*out.cubic, *out.span, tol)) return PointGate::EntirelyDegenerate;
  if (regularity(*out.cubic, tol) == Regularity::Irregular) return PointGate::Irregular;
  return PointGate::Pencil;
}

inline void apply_gauge(PencilFrame& f, const GaugeFactors& gauge, const Point& p) {
  if (!gauge) return;
  const auto g = gauge(p, f.order());
  f.rho *= g[0];
  f.sigma *= g[1];
  for (auto& x : f.xi.c) x *= g[2];
}

inline PointAnalysis analyze_point(const ConnectionSpec& spec, const Point& p, int order,
                                   double tol = kDefaultTol, const GaugeFactors& gauge = {}) {
  PointAnalysis a;
  a.frame = build_point_frame(spec, p, order);
  a.gate = gate_point(a.frame.weyl, a.frame.q, a.frame.eps, a.frame.gamma_scale, tol, a);
  if (a.gate != PointGate::Pencil) return a;
  const DegenerateElements de = degenerate_elements(*a.span, tol);
  a.notes = de.skipped;
  a.branches = pencil_frames(de, tol);
  for (auto& f : a.branches) apply_gauge(f, gauge, p);
  return a;
}

/// Index of the branch whose rho is closest (up to sign) to `predicted`.
inline int match_branch(const std::vector<PencilFrame>& branches,
                        const Sym2Contra<double>& predicted) {
  int best = -1;
  double dist = 0;
  for (int i = 0; i < static_cast<int>(branches.size()); ++i) {
    const auto r = values(branches[i].rho);
    const double dp = frobenius2_value(r - predicted);
    const double dm = frobenius2_value(r + predicted);
    const double d = std::min(dp, dm);
    if (best < 0 || d < dist) {
      best = i;
      dist = d;
    }
  }
  return best;
}

inline Sym2Contra<double> taylor_predict(const Sym2Contra<Jet>& m, const Point& p,
                                         const Point& q) {
  const std::array<double, 3> d = {q[0] - p[0], q[1] - p[1], q[2] - p[2]};
  Sym2Contra<double> r;
  for (int k = 0; k < 6; ++k) r.c[k] = taylor_eval(m.c[k], d);
  return r;
}

/// The candidate on the branch continuing `reference` from p to q.
struct BranchEval {
  PointAnalysis analysis;
  int branch = -1;
  PhiPsi phipsi;
  Candidate cand;
};

inline BranchEval evaluate_branch(const ConnectionSpec& spec, const Point& p,
                                  const Sym2Contra<Jet>& reference_rho, const Point& q,
                                  int order, double tol, const GaugeFactors& gauge) {
  BranchEval e;
  e.analysis = analyze_point(spec, q, order, tol, gauge);
  if (e.analysis.gate != PointGate::Pencil || e.analysis.branches.empty())
    throw PipelineError(std::string("gate changed near the base point: ") +
                        to_string(e.analysis.gate));
  e.branch = match_branch(e.analysis.branches, taylor_predict(reference_rho, p, q));
  const PencilFrame& f = e.analysis.branches[e.branch];
  e.phipsi = compute_phi_psi(f, e.analysis.frame.gamma);
  e.cand = candidate(f, e.phipsi, tol);
  if (e.cand.status != CandidateStatus::Ok)
    throw PipelineError("candidate degenerates near the base point");
  return e;
}

// ---------------------------------------------------------------------------
// Verdict

struct MetricSample {
  Point point{};
  double h = 1;
  Sym2Contra<double> sigma;   // h sigma_hat
  Sym2Cov<double> g;
};

struct CandidateSolution {
  int branch = 0;
  Sym2Contra<Jet> sigma_hat;  // at the base point
  Covector<Jet> omega;
  Sym2Cov<double> metric_at_base;
};

struct ProjectivelyFlat {};

struct Metrisable {
  CandidateSolution solution;
  std::vector<MetricSample> metric;
  double max_exactness = 0;
  double max_final_relative = 0;
};

struct NotMetrisable {
  NotMetrisableReason reason;
  std::string detail;
};

struct Indeterminate {
  IndeterminateReason reason;
  std::string detail;
};

using Outcome = std::variant<ProjectivelyFlat, Metrisable, NotMetrisable, Indeterminate>;

struct BranchReport {
  int branch = 0;
  double root = 0;
  double phi = 0, psi = 0;
  std::string outcome;
  std::string detail;
  double max_exactness = 0;
  double max_final_relative = 0;
  int probes_used = 0;
};

struct Diagnostics {
  Point point{};
  int order = 0;
  double tol = 0;
  PointGate gate = PointGate::Pencil;
  double gamma_scale = 0;
  double normalization_residual = 0;
  double v_norm = 0, v_threshold = 0;
  double q_norm = 0, q_threshold = 0;
  double discriminant = 0;
  std::vector<BranchReport> branches;
  std::vector<std::string> notes;
};

struct Verdict {
  Outcome outcome;
  Diagnostics trace;

  bool metrisable() const { return std::holds_alternative<Metrisable>(outcome); }
};

inline std::string outcome_name(const Outcome& o) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ProjectivelyFlat>) return "ProjectivelyFlat";
        else if constexpr (std::is_same_v<T, Metrisable>) return "Metrisable";
        else if constexpr (std::is_same_v<T, NotMetrisable>) return "NotMetrisable";
        else return "Indeterminate";
      },
      o);
}

inline std::string outcome_reason(const Outcome& o) {
  if (auto* n = std::get_if<NotMetrisable>(&o)) return to_string(n->reason);
  if (auto* i = std::get_if<Indeterminate>(&o)) return to_string(i->reason);
  return "";
}

/// The verdict implied by a point gate, or nullopt when the pencil stage
/// has to run.
inline std::optional<Outcome> gate_outcome(const PointAnalysis& a) {
  switch (a.gate) {
    case PointGate::ProjectivelyFlat:
      return ProjectivelyFlat{};
    case PointGate::QNonzero:
      return NotMetrisable{NotMetrisableReason::QNonzero, "|Q| = " + std::to_string(a.q_norm)};
    case PointGate::EntirelyDegenerate:
      return NotMetrisable{NotMetrisableReason::PencilEntirelyDegenerate,
                           "every member of the pencil is singular"};
    case PointGate::Irregular:
      return Indeterminate{IndeterminateReason::IrregularPencil,
                           "discriminant " + std::to_string(a.discriminant)};
    case PointGate::Pencil:
      break;
  }
  return std::nullopt;
}

namespace detail {

/// Runs the candidate and the scale test for one branch of the base pencil.
inline Outcome run_branch(const ConnectionSpec& spec, const Point& p, const PointAnalysis& base,
                          int index, const SolverOptions& opt, BranchReport& rep) {
  const PencilFrame& f = base.branches[index];
  rep.branch = f.branch;
  rep.root = f.root;
  const PhiPsi pp = compute_phi_psi(f, base.frame.gamma);
  rep.phi = pp.phi.value();
  rep.psi = pp.psi.value();
  const Candidate c = candidate(f, pp, opt.tol);
  switch (c.status) {
    case CandidateStatus::PhiPsiBothZero:
      return Indeterminate{IndeterminateReason::PhiPsiBothZero, "phi and psi vanish at the base point"};
    case CandidateStatus::PhiZero:
      return NotMetrisable{NotMetrisableReason::SingularCandidate,
                           "phi vanishes while psi does not: the candidate is a multiple of rho"};
    case CandidateStatus::Singular:
      return NotMetrisable{NotMetrisableReason::SingularCandidate,
                           "sigma - (psi/phi) rho is singular (relative det " +
                               std::to_string(c.det_relative) + ")"};
    case CandidateStatus::Ok: break;
  }

  std::string failure;
  ScaleFieldAccessor field = [&](const Point& q) -> std::optional<ScaleField> {
    if (q == p) return ScaleField{c.sigma_hat, base.frame.gamma};
    try {
      BranchEval e = evaluate_branch(spec, p, f.rho, q, opt.order, opt.tol, opt.gauge);
      return ScaleField{e.cand.sigma_hat, e.analysis.frame.gamma};
    } catch (const EvalError&) {
      return std::nullopt;
    }
  };
  ScaleTestResult st;
  try {
    st = scale_test(field, probe_points(p, opt.probe_half_width), opt.tol, opt.final_tol);
  } catch (const PipelineError& e) {
    return Indeterminate{IndeterminateReason::NumericalDegeneracy, e.what()};
  } catch (const JetError& e) {
    return Indeterminate{IndeterminateReason::NumericalDegeneracy, e.what()};
  }
  rep.max_exactness = st.max_exactness;
  rep.max_final_relative = st.max_final_relative;
  rep.probes_used = static_cast<int>(st.samples.size());
  if (!st.exact)
    return NotMetrisable{NotMetrisableReason::OmegaNotExact,
                         "d omega = " + std::to_string(st.max_exactness)};
  if (!st.final_ok)
    return NotMetrisable{NotMetrisableReason::FinalResidual,
                         "relative residual " + std::to_string(st.max_final_relative)};

  Metrisable m;
  m.solution.branch = f.branch;
  m.solution.sigma_hat = c.sigma_hat;
  m.solution.omega = st.samples.front().omega;
  m.max_exactness = st.max_exactness;
  m.max_final_relative = st.max_final_relative;

  // omega along integration paths comes from order-3 pipelines: sigma_hat is
  // then an order-1 jet, enough for one derivative.
  const int path_order = 3;
  auto omega_at = [&](const Point& q) -> Covector<double> {
    BranchEval e = evaluate_branch(spec, p, f.rho, q, path_order, opt.tol, opt.gauge);
    return values(omega_of(e.cand.sigma_hat, e.analysis.frame.gamma));
  };
  auto sigma_hat_at = [&](const Point& q) -> Sym2Contra<double> {
    if (q == p) return values(c.sigma_hat);
    BranchEval e = evaluate_branch(spec, p, f.rho, q, path_order, opt.tol, opt.gauge);
    return values(e.cand.sigma_hat);
  };
  std::vector<Point> pts{p};
  for (const Point& q : opt.metric_points)
    if (q != p) pts.push_back(q);
  try {
    for (const Point& q : pts) {
      MetricSample s;
      s.point = q;
      s.h = reconstruct_h(omega_at, p, q);
      const Sym2Contra<double> sh = sigma_hat_at(q);
      s.sigma = sh * s.h;
      const double eps = eval(spec.epsilon, q);
      s.g = metric_from(sh, s.h, Epsilon<double>(eps));
      m.metric.push_back(s);
    }
  } catch (const std::exception& e) {
    return Indeterminate{IndeterminateReason::NumericalDegeneracy,
                         std::string("metric reconstruction failed: ") + e.what()};
  }
  m.solution.metric_at_base = m.metric.front().g;
  return m;
}

}  // namespace detail

/// Local metrisability near p.  Branches of the pencil are tried in
/// ascending chart order and the first Metrisable one is accepted; otherwise
/// any Indeterminate branch makes the verdict Indeterminate, and only when
/// every branch is NotMetrisable is the verdict NotMetrisable.
inline Verdict decide(const ConnectionSpec& spec, const Point& p, const SolverOptions& opt = {}) {
  if (opt.order < kDefaultOrder || opt.order > kMaxJetOrder)
    throw std::invalid_argument("decide needs jet order 4 (three derivatives of V and one of omega)");
  Verdict v;
  Diagnostics& d = v.trace;
  d.point = p;
  d.order = opt.order;
  d.tol = opt.tol;

  PointAnalysis a;
  try {
    a = analyze_point(spec, p, opt.order, opt.tol, opt.gauge);
  } catch (const PencilError& e) {
    v.outcome = Indeterminate{IndeterminateReason::NumericalDegeneracy, e.what()};
    return v;
  } catch (const PipelineError& e) {
    v.outcome = Indeterminate{IndeterminateReason::NumericalDegeneracy, e.what()};
    return v;
  } catch (const JetError& e) {
    v.outcome = Indeterminate{IndeterminateReason::NumericalDegeneracy, e.what()};
    return v;
  }
  d.gate = a.gate;
  d.gamma_scale = a.frame.gamma_scale;
  d.normalization_residual = a.frame.normalization_residual;
  d.v_norm = a.v_norm;
  d.v_threshold = a.v_threshold;
  d.q_norm = a.q_norm;
  d.q_threshold = a.q_threshold;
  d.discriminant = a.discriminant;
  d.notes = a.notes;

  if (auto early = gate_outcome(a)) {
    v.outcome = *early;
    return v;
  }
  if (a.branches.empty()) {
    v.outcome = Indeterminate{IndeterminateReason::NumericalDegeneracy,
                              "no usable degenerate element"};
    return v;
  }

  std::optional<Outcome> first_indeterminate, first_negative;
  for (int i = 0; i < static_cast<int>(a.branches.size()); ++i) {
    BranchReport rep;
    Outcome o;
    try {
      o = detail::run_branch(spec, p, a, i, opt, rep);
    } catch (const std::exception& e) {
      o = Indeterminate{IndeterminateReason::NumericalDegeneracy, e.what()};
    }
    rep.outcome = outcome_name(o) + (outcome_reason(o).empty() ? "" : ":" + outcome_reason(o));
    if (auto* n = std::get_if<NotMetrisable>(&o)) rep.detail = n->detail;
    if (auto* n = std::get_if<Indeterminate>(&o)) rep.detail = n->detail;
    d.branches.push_back(rep);
    if (std::holds_alternative<Metrisable>(o)) {
      v.outcome = std::move(o);
      return v;
    }
    if (std::holds_alternative<Indeterminate>(o) && !first_indeterminate) first_indeterminate = o;
    if (std::holds_alternative<NotMetrisable>(o) && !first_negative) first_negative = o;
  }
  v.outcome = first_indeterminate ? *first_indeterminate : *first_negative;
  return v;
}

}  // namespace metrise3d
