#pragma once

// Linear algebra of a nonsingular pencil {s N + t H} of symmetric 3x3
// matrices: the characteristic binary cubic, regularity, degenerate members
// and their kernels, the trace-orthogonal nonsingular partner, and the gauge
// that brings (rho, sigma, xi) into normal form:
//   sigma invertible,  sigma_{bc} rho^{bc} = 0,  rho^{bc} xi_b = 0.
// Also the Loewy-Radwan classifier for 3-spaces of degenerate matrices.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metrise3d/jet.hpp"
#include "metrise3d/projective.hpp"
#include "metrise3d/tensor.hpp"

namespace metrise3d {

enum class PencilFailure {
  NoRealRoot,
  NoNonsingularPartner,
  NonUniquePartner,
  NormalFormViolated,
};

class PencilError : public PipelineError {
 public:
  PencilError(PencilFailure kind, const std::string& what)
      : PipelineError(what), kind_(kind) {}
  PencilFailure kind() const { return kind_; }

 private:
  PencilFailure kind_;
};

/// Matrix trace of A B for symmetric component arrays (flavor-agnostic: used
/// for matrix-language identities such as trace(adj(H) N)).
template <class S, class F>
S trace_product(const Sym2<S, F>& a, const Sym2<S, F>& b) {
  S r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r += a(i, j) * b(i, j);
  return r;
}

/// chi(s, t) = det(s N + t H) = sum_k c[k] s^k t^(3-k) (ordinary determinant).
struct BinaryCubic {
  std::array<Jet, 4> c;

  double value_at(double s, double t) const {
    double r = 0;
    for (int k = 0; k < 4; ++k) r += c[k].value() * std::pow(s, k) * std::pow(t, 3 - k);
    return r;
  }
  double scale() const {
    double m = 0;
    for (const auto& v : c) m = std::max(m, std::abs(v.value()));
    return m;
  }
};

template <class F>
BinaryCubic characteristic_cubic(const Sym2<Jet, F>& n, const Sym2<Jet, F>& h) {
  BinaryCubic b;
  b.c[3] = det(n);
  b.c[2] = trace_product(adjugate(n), h);
  b.c[1] = trace_product(adjugate(h), n);
  b.c[0] = det(h);
  return b;
}

/// Discriminant of the value-level binary cubic.  Positive: three distinct
/// real roots; negative: one real and a complex pair; zero: repeated root.
inline double discriminant(const BinaryCubic& cubic) {
  const double a = cubic.c[3].value(), b = cubic.c[2].value(), c = cubic.c[1].value(),
               d = cubic.c[0].value();
  return b * b * c * c - 4 * a * c * c * c - 4 * b * b * b * d - 27 * a * a * d * d +
         18 * a * b * c * d;
}

enum class Regularity { Regular, Irregular };

/// Regular iff |discriminant| > tol * scale^4, scale = max |c_k|.
inline Regularity regularity(const BinaryCubic& cubic, double tol = 1e-9) {
  const double s = cubic.scale();
  if (s == 0.0) return Regularity::Irregular;
  return std::abs(discriminant(cubic)) > tol * s * s * s * s ? Regularity::Regular
                                                             : Regularity::Irregular;
}

/// True when every member of the pencil is singular at value level.
inline bool identically_zero(const BinaryCubic& cubic, const PencilSpan& span,
                             double tol = 1e-9) {
  const double m = std::max(max_abs_value(values(span.rho_raw)),
                            max_abs_value(values(span.sigma_raw)));
  return cubic.scale() <= tol * m * m * m;
}

/// Affine chart u -> B2 + u B1 of the pencil with B1 nonsingular, so that all
/// three roots of p(u) = det(B2 + u B1) are finite.
struct PencilChart {
  double angle = 0;
  Sym2Contra<Jet> b1, b2;
  BinaryCubic poly;  // p(u) = sum_k poly.c[k] u^k
};

inline PencilChart make_chart(const PencilSpan& span) {
  BinaryCubic raw = characteristic_cubic(span.rho_raw, span.sigma_raw);
  double best = -1, angle = 0;
  for (int k = 0; k < 12; ++k) {
    const double th = k * std::numbers::pi / 12;
    const double v = std::abs(raw.value_at(std::cos(th), std::sin(th)));
    if (v > best) {
      best = v;
      angle = th;
    }
  }
  PencilChart ch;
  ch.angle = angle;
  const double cs = std::cos(angle), sn = std::sin(angle);
  ch.b1 = span.rho_raw * cs + span.sigma_raw * sn;
  ch.b2 = span.sigma_raw * cs - span.rho_raw * sn;
  ch.poly = characteristic_cubic(ch.b1, ch.b2);
  return ch;
}

/// Real roots of c0 + c1 u + c2 u^2 + c3 u^3 (c3 != 0), ascending.  The
/// discriminant sign decides how many are real; roots come from the companion
/// matrix and are polished by Newton's method.
inline std::vector<double> real_cubic_roots(const std::array<double, 4>& c) {
  Eigen::Matrix3d comp = Eigen::Matrix3d::Zero();
  comp(1, 0) = comp(2, 1) = 1.0;
  for (int k = 0; k < 3; ++k) comp(k, 2) = -c[k] / c[3];
  Eigen::EigenSolver<Eigen::Matrix3d> es(comp, false);
  std::vector<std::complex<double>> ev(es.eigenvalues().data(), es.eigenvalues().data() + 3);
  std::sort(ev.begin(), ev.end(), [](auto a, auto b) { return std::abs(a.imag()) < std::abs(b.imag()); });
  const double disc = c[2] * c[2] * c[1] * c[1] - 4 * c[3] * c[1] * c[1] * c[1] -
                      4 * c[2] * c[2] * c[2] * c[0] - 27 * c[3] * c[3] * c[0] * c[0] +
                      18 * c[3] * c[2] * c[1] * c[0];
  const int count = disc > 0 ? 3 : 1;
  std::vector<double> roots;
  for (int i = 0; i < count; ++i) {
    double r = ev[i].real();
    for (int it = 0; it < 3; ++it) {
      const double p = ((c[3] * r + c[2]) * r + c[1]) * r + c[0];
      const double dp = (3 * c[3] * r + 2 * c[2]) * r + c[1];
      if (dp == 0.0) break;
      r -= p / dp;
    }
    roots.push_back(r);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

/// Largest-|value| component made positive.
template <class F>
void fix_sign(Sym2<Jet, F>& m) {
  int best = 0;
  for (int k = 1; k < 6; ++k)
    if (std::abs(m.c[k].value()) > std::abs(m.c[best].value())) best = k;
  if (m.c[best].value() < 0) m *= -1.0;
}

template <class F>
void fix_sign(Vec3<Jet, F>& v) {
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(v[k].value()) > std::abs(v[best].value())) best = k;
  if (v[best].value() < 0)
    for (auto& x : v.c) x = -x;
}

template <class F>
Sym2<Jet, F> unit_frobenius(const Sym2<Jet, F>& m) {
  return m * reciprocal(sqrt(frobenius2(m)));
}

struct DegenerateElement {
  int branch = 0;
  double root = 0;         // chart parameter u at value level
  Jet u;                   // lifted root
  Sym2Contra<Jet> n;       // B2 + u B1, singular
  Covector<Jet> xi;        // unit kernel covector, sign-fixed
};

struct DegenerateElements {
  PencilChart chart;
  std::vector<DegenerateElement> elements;
  std::vector<std::string> skipped;  // branches dropped for rank <= 1
};

/// The singular members of a regular pencil (one or three) with their kernel
/// covectors, ordered by ascending chart root.
inline DegenerateElements degenerate_elements(const PencilSpan& span, double tol = 1e-9) {
  DegenerateElements out;
  out.chart = make_chart(span);
  const auto& poly = out.chart.poly;
  std::array<double, 4> c0{};
  for (int k = 0; k < 4; ++k) c0[k] = poly.c[k].value();
  if (c0[3] == 0.0)
    throw PencilError(PencilFailure::NoRealRoot, "pencil chart base element is singular");
  const std::vector<double> roots = real_cubic_roots(c0);
  if (roots.empty()) throw PencilError(PencilFailure::NoRealRoot, "cubic has no real root");

  int branch = 0;
  for (double r : roots) {
    DegenerateElement e;
    e.branch = branch++;
    e.root = r;
    e.u = lift_root(poly.c, r, tol);
    e.n = out.chart.b2 + out.chart.b1 * e.u;
    const Sym2Contra<Jet> adj = adjugate(e.n);
    int col = 0;
    double best = -1;
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int i = 0; i < 3; ++i) s += adj(i, j).value() * adj(i, j).value();
      if (s > best) {
        best = s;
        col = j;
      }
    }
    const double nn = frobenius2_value(e.n);
    if (std::sqrt(best) <= tol * nn) {
      out.skipped.push_back("branch " + std::to_string(e.branch) +
                            ": degenerate element has rank <= 1");
      continue;
    }
    Jet norm2;
    for (int i = 0; i < 3; ++i) norm2 += adj(i, col) * adj(i, col);
    const Jet inv = reciprocal(sqrt(norm2));
    for (int i = 0; i < 3; ++i) e.xi[i] = adj(i, col) * inv;
    fix_sign(e.xi);
    out.elements.push_back(e);
  }
  return out;
}

/// The nonsingular H = M + w N of the pencil with trace(H^{-1} N) = 0, unit
/// Frobenius norm, largest-|value| diagonal entry positive.  Solves
/// p(w) = trace(adj(M + w N) N) = 0, interpolated through w = 0, 1, 2.
inline Sym2Contra<Jet> orthogonal_partner(const Sym2Contra<Jet>& n, const Sym2Contra<Jet>& m,
                                          double tol = 1e-9) {
  auto p = [&](double w) { return trace_product(adjugate(m + n * w), n); };
  const Jet q0 = p(0), q1 = p(1), q2 = p(2);
  std::array<Jet, 3> a = {q0, Jet(), Jet()};
  a[2] = (q2 - q1 * 2.0 + q0) * 0.5;
  a[1] = q1 - q0 - a[2];
  const double scale = std::max({std::abs(a[0].value()), std::abs(a[1].value()),
                                 std::abs(a[2].value())});
  if (scale == 0.0)
    throw PencilError(PencilFailure::NoNonsingularPartner, "trace condition is void");

  auto nonsingular = [&](double w) {
    Sym2Contra<double> h = values(m) + values(n) * w;
    const double f = std::sqrt(frobenius2_value(h));
    return std::abs(det(h)) > tol * f * f * f;
  };

  std::vector<double> candidates;
  const bool linear = std::abs(a[2].value()) <= tol * scale;
  if (linear) {
    if (std::abs(a[1].value()) > tol * scale) candidates.push_back(-a[0].value() / a[1].value());
  } else {
    const double A = a[2].value(), B = a[1].value(), C = a[0].value();
    const double d = B * B - 4 * A * C;
    if (d >= 0) {
      const double sq = std::sqrt(d);
      const double qq = -0.5 * (B + std::copysign(sq, B));
      candidates.push_back(qq / A);
      if (qq != 0.0) candidates.push_back(C / qq);
    }
  }
  std::vector<double> valid;
  for (double w : candidates)
    if (nonsingular(w)) valid.push_back(w);
  if (valid.empty())
    throw PencilError(PencilFailure::NoNonsingularPartner,
                      "no trace-orthogonal nonsingular element in the pencil");
  if (valid.size() > 1 && std::abs(valid[0] - valid[1]) > 1e-8 * (1 + std::abs(valid[0])))
    throw PencilError(PencilFailure::NonUniquePartner,
                      "two distinct trace-orthogonal nonsingular elements");

  Jet w;
  if (linear) {
    w = -(a[0] / a[1]);
  } else {
    w = lift_root(a, valid[0], tol);
  }
  Sym2Contra<Jet> h = unit_frobenius(m + n * w);
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(h(i, i).value()) > std::abs(h(best, best).value())) best = i;
  if (h(best, best).value() < 0) h *= -1.0;

  const Sym2Cov<Jet> hinv = inverse(h);
  const double tr = std::abs(contract(hinv, n).value());
  const double ref = std::sqrt(frobenius2_value(values(hinv)) * frobenius2_value(values(n)));
  if (tr > 1e-10 * ref)
    throw PencilError(PencilFailure::NormalFormViolated,
                      "partner fails trace(H^-1 N) = 0: " + std::to_string(tr / ref));
  return h;
}

/// rho, sigma, xi in normal form.  All fields are jets, so the frame is a
/// smooth local field around the base point.
struct PencilFrame {
  Sym2Contra<Jet> rho;
  Sym2Contra<Jet> sigma;
  Covector<Jet> xi;
  int branch = 0;
  double root = 0;

  int order() const { return rho.c[0].order(); }
};

struct NormalFormResiduals {
  double det_sigma = 0;     // |det sigma| / |sigma|_F^3
  double trace = 0;         // |sigma_{bc} rho^{bc}| / (|sigma^-1| |rho|)
  double kernel = 0;        // max |rho^{bc} xi_b| / (|rho| |xi|)
};

inline NormalFormResiduals normal_form_residuals(const PencilFrame& f) {
  NormalFormResiduals r;
  const auto s = values(f.sigma);
  const auto rho = values(f.rho);
  const auto xi = values(f.xi);
  const double fs = std::sqrt(frobenius2_value(s));
  r.det_sigma = std::abs(det(s)) / (fs * fs * fs);
  const Sym2Cov<double> sinv = inverse(s);
  r.trace = std::abs(contract(sinv, rho)) /
            std::sqrt(frobenius2_value(sinv) * frobenius2_value(rho));
  const Vector<double> k = contract(rho, xi);
  const double xn = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
  const double rn = std::sqrt(frobenius2_value(rho));
  for (int i = 0; i < 3; ++i) r.kernel = std::max(r.kernel, std::abs(k[i]) / (rn * xn));
  return r;
}

/// Applies the gauge rho = N / |N|_F (largest-|value| component positive),
/// sigma = H, xi as given, and checks the three normal-form conditions.
inline PencilFrame normalize_frame(const Sym2Contra<Jet>& n, const Covector<Jet>& xi,
                                   const Sym2Contra<Jet>& h, int branch = 0,
                                   double root = 0, double tol = 1e-9) {
  PencilFrame f;
  f.rho = unit_frobenius(n);
  fix_sign(f.rho);
  f.sigma = h;
  f.xi = xi;
  f.branch = branch;
  f.root = root;
  const NormalFormResiduals r = normal_form_residuals(f);
  if (r.det_sigma <= tol || r.trace > 1e-10 || r.kernel > 1e-10)
    throw PencilError(PencilFailure::NormalFormViolated,
                      "normal form violated: det " + std::to_string(r.det_sigma) + ", trace " +
                          std::to_string(r.trace) + ", kernel " + std::to_string(r.kernel));
  return f;
}

/// Every branch of a regular pencil in normal form.
inline std::vector<PencilFrame> pencil_frames(const DegenerateElements& de, double tol = 1e-9) {
  std::vector<PencilFrame> frames;
  for (const auto& e : de.elements) {
    const Sym2Contra<Jet> h = orthogonal_partner(e.n, de.chart.b1, tol);
    frames.push_back(normalize_frame(e.n, e.xi, h, e.branch, e.root, tol));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Loewy-Radwan classification of 3-dimensional spaces of symmetric matrices

enum class SubspaceKind { W1, W2, NotDegenerate, Other };

struct SubspaceClass {
  SubspaceKind kind = SubspaceKind::Other;
  std::array<double, 3> common{};  // W1: common kernel covector; W2: theta
};

inline const char* to_string(SubspaceKind k) {
  switch (k) {
    case SubspaceKind::W1: return "W1";
    case SubspaceKind::W2: return "W2";
    case SubspaceKind::NotDegenerate: return "NotDegenerate";
    case SubspaceKind::Other: return "Other";
  }
  return "?";
}

namespace detail {

inline Eigen::Matrix3d to_eigen(const Sym2Contra<double>& m) {
  Eigen::Matrix3d r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = m(i, j);
  return r;
}

/// Orthonormal basis (columns) of the null space of a, with relative cutoff.
inline Eigen::MatrixXd null_space(const Eigen::MatrixXd& a, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > tol * std::max(smax, 1e-300)) ++rank;
  return svd.matrixV().rightCols(a.cols() - rank);
}

}  // namespace detail

inline SubspaceClass classify_subspace(const std::array<Sym2Contra<double>, 3>& basis,
                                       double tol = 1e-9) {
  SubspaceClass out;
  std::mt19937_64 rng(0x4c52ULL);
  auto uniform = [&] { return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0; };
  for (int k = 0; k < 20; ++k) {
    Sym2Contra<double> m = basis[0] * uniform() + basis[1] * uniform() + basis[2] * uniform();
    const double f = std::sqrt(frobenius2_value(m));
    if (std::abs(det(m)) > tol * f * f * f) {
      out.kind = SubspaceKind::NotDegenerate;
      return out;
    }
  }

  Eigen::MatrixXd stacked(9, 3);
  for (int i = 0; i < 3; ++i) stacked.block<3, 3>(3 * i, 0) = detail::to_eigen(basis[i]);
  Eigen::MatrixXd kernel = detail::null_space(stacked, 1e-8);
  if (kernel.cols() >= 1) {
    out.kind = SubspaceKind::W1;
    for (int i = 0; i < 3; ++i) out.common[i] = kernel(i, 0);
    return out;
  }

  // theta spans the intersection of the column spaces
  Eigen::MatrixXd complements(9, 3);
  for (int i = 0; i < 3; ++i) {
    const Eigen::Matrix3d a = detail::to_eigen(basis[i]);
    const Eigen::MatrixXd ker = detail::null_space(a, 1e-8);
    const Eigen::Matrix3d proj_ker = ker * ker.transpose();
    complements.block<3, 3>(3 * i, 0) = proj_ker;
  }
  Eigen::MatrixXd inter = detail::null_space(complements, 1e-8);
  if (inter.cols() == 1) {
    const Eigen::Vector3d theta = inter.col(0);
    const Eigen::Matrix3d perp = Eigen::Matrix3d::Identity() - theta * theta.transpose();
    bool ok = true;
    for (int i = 0; i < 3; ++i) {
      const Eigen::Matrix3d a = detail::to_eigen(basis[i]);
      if ((perp * a * perp).norm() > 1e-8 * std::max(a.norm(), 1e-300)) ok = false;
    }
    if (ok) {
      out.kind = SubspaceKind::W2;
      for (int i = 0; i < 3; ++i) out.common[i] = theta(i);
      return out;
    }
  }
  out.kind = SubspaceKind::Other;
  return out;
}

}  // namespace metrise3d
