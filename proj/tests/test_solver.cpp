#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace metrise3d;

namespace {

ConnectionSpec flat_spec() {
  ConnectionSpec s;
  for (auto& m : s.gamma)
    for (auto& row : m)
      for (auto& g : row) g = Expr::constant(0.0);
  return s;
}

Sym2Contra<Expr> zero_sym() {
  Sym2Contra<Expr> s;
  for (auto& c : s.c) c = Expr::constant(0.0);
  return s;
}

Sym2Contra<Jet> jets(const Sym2Contra<Expr>& m, const Point& p, int order) {
  Sym2Contra<Jet> r;
  for (int k = 0; k < 6; ++k) r.c[k] = jet_of(m.c[k], p, order);
  return r;
}

/// The printed rho-tilde and sigma-tilde of the worked example.
Sym2Contra<Expr> printed_rho_tilde() {
  Sym2Contra<Expr> r = zero_sym();
  r(1, 1) = parse("2/(1+x^2)^4");
  r(1, 2) = parse("-x/(1+x^2)^4");
  return r;
}

Sym2Contra<Expr> printed_sigma_tilde() {
  Sym2Contra<Expr> s = zero_sym();
  s(0, 0) = parse("2*x^2/(1+x^2)^4");
  s(1, 1) = parse("2*(2+x^2)*(x*y+z)^2*z^2/(1+x^2)^4");
  s(1, 2) = parse("-2*x*(x*y+z)^2*z^2/(1+x^2)^4");
  s(2, 2) = parse("2*x^2*(x*y+z)^2*z^2/(1+x^2)^4");
  return s;
}

/// sigma-hat as printed, with the (2,2) entry read as (xy+z)^2 z^2 like the
/// (1,1) entry; the printed (xy+z^2) z^2 does not satisfy the equations.
Sym2Contra<Expr> printed_sigma_hat() {
  Sym2Contra<Expr> s = zero_sym();
  s(0, 0) = parse("2*x^2/(1+x^2)^4");
  s(1, 1) = parse("2*x^2*(x*y+z)^2*z^2/(1+x^2)^4");
  s(2, 2) = s(1, 1);
  return s;
}

PencilFrame printed_frame(const Point& p, int order) {
  PencilFrame f;
  f.rho = jets(printed_rho_tilde(), p, order);
  f.sigma = jets(printed_sigma_tilde(), p, order);
  f.xi = {{Jet::constant(1.0, order), Jet::constant(0.0, order), Jet::constant(0.0, order)}};
  return f;
}

std::vector<Point> deterministic_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i)
    pts.push_back({oracle::uniform(rng, 0.5, 1.5), oracle::uniform(rng, 0.5, 1.5), oracle::uniform(rng, 0.5, 1.5)});
  return pts;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

ConnectionSpec perturbed_fixture() {
  ConnectionSpec s = oracle::fixture();
  s.gamma[0][0][1] = s.gamma[0][0][1] + parse("0.1*x");
  return s;
}

}  // namespace

TEST(PhiPsi, PrintedClosedForms) {
  for (const Point& p : deterministic_points(5, 1)) {
    const PointFrame pf = normalize_connection(oracle::fixture(), p, 2);
    const PhiPsi pp = compute_phi_psi(printed_frame(p, 2), pf.gamma);
    const double x = p[0], y = p[1], z = p[2];
    const double w = x * y + z, a9 = std::pow(1 + x * x, 9);
    EXPECT_LT(rel(pp.phi.value(), -4 * x * x * x / (a9 * w * w * z * z)), 1e-9);
    EXPECT_LT(rel(pp.psi.value(), -8 * x * x * x / a9), 1e-9);
  }
}

TEST(PhiPsi, AtOneOneOne) {
  const Point p{1, 1, 1};
  const PointFrame pf = normalize_connection(oracle::fixture(), p, 2);
  const PhiPsi pp = compute_phi_psi(printed_frame(p, 2), pf.gamma);
  EXPECT_NEAR(pp.phi.value(), -1.0 / 512, 1e-15);
  EXPECT_NEAR(pp.psi.value(), -1.0 / 64, 1e-15);
  EXPECT_NEAR(pp.psi.value() / pp.phi.value(), 8.0, 1e-12);
}

TEST(PhiPsi, FlatWithConstantPencil) {
  PencilFrame f;
  f.rho = constant_jets(Sym2Contra<double>::diagonal(0, 1, -1), 2);
  f.sigma = constant_jets(Sym2Contra<double>::identity(), 2);
  f.xi = {{Jet::constant(1.0, 2), Jet::constant(0.0, 2), Jet::constant(0.0, 2)}};
  const PointFrame pf = normalize_connection(flat_spec(), {1, 1, 1}, 2);
  const PhiPsi pp = compute_phi_psi(f, pf.gamma);
  EXPECT_EQ(pp.phi.value(), 0.0);
  EXPECT_EQ(pp.psi.value(), 0.0);
  EXPECT_EQ(candidate(f, pp).status, CandidateStatus::PhiPsiBothZero);
}

TEST(Candidate, PrintedSigmaHat) {
  const Point p{1, 1, 1};
  const PointFrame pf = normalize_connection(oracle::fixture(), p, 3);
  const PencilFrame f = printed_frame(p, 3);
  const Candidate c = candidate(f, compute_phi_psi(f, pf.gamma));
  ASSERT_EQ(c.status, CandidateStatus::Ok);
  const auto want = jets(printed_sigma_hat(), p, 2);
  for (int k = 0; k < 6; ++k)
    for (int i = 0; i < want.c[k].size(); ++i) EXPECT_NEAR(c.sigma_hat.c[k][i], want.c[k][i], 1e-12);
}

TEST(Candidate, PhiZeroIsSingular) {
  PencilFrame f = printed_frame({1, 1, 1}, 2);
  PhiPsi pp;
  pp.phi = Jet::constant(0.0, 1);
  pp.psi = Jet::constant(1.0, 1);
  pp.phi_scale = pp.psi_scale = 1.0;
  EXPECT_EQ(candidate(f, pp).status, CandidateStatus::PhiZero);
  pp.psi = Jet::constant(0.0, 1);
  EXPECT_EQ(candidate(f, pp).status, CandidateStatus::PhiPsiBothZero);
}

TEST(Omega, PrintedGradient) {
  for (const Point& p : deterministic_points(5, 2)) {
    const PointFrame pf = normalize_connection(oracle::fixture(), p, 2);
    const Covector<Jet> w = omega_of(jets(printed_sigma_hat(), p, 2), pf.gamma);
    const auto want = oracle::printed_omega(p);
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(w[a].value(), want[a], 1e-9 * std::max(1.0, std::abs(want[a])));
    const auto [r, s] = exactness_residual(w);
    EXPECT_LT(r, 1e-10 * std::max(1.0, s));
  }
}

TEST(Omega, PipelineDiffersByGaugeGradient) {
  // Pipeline sigma-hat = lambda * printed sigma-hat, so its omega carries an
  // extra (5/2) d log lambda.
  const Point p{1, 1, 1};
  const Verdict v = decide(oracle::fixture(), p);
  ASSERT_TRUE(v.metrisable());
  const auto& sol = std::get<Metrisable>(v.outcome).solution;
  const int k = sol.sigma_hat.c[0].order();
  const auto printed = jets(printed_sigma_hat(), p, k);
  const Jet lambda = sol.sigma_hat(1, 1) / printed(1, 1);
  for (int i = 0; i < 6; ++i) {
    const Jet d = sol.sigma_hat.c[i] - printed.c[i] * lambda;
    EXPECT_LT(d.max_abs(), 1e-9 * sol.sigma_hat(1, 1).max_abs());
  }
  const auto want = oracle::printed_omega(p);
  for (int a = 0; a < 3; ++a) {
    const double dlog = derivative(lambda, a).value() / lambda.value();
    EXPECT_NEAR(sol.omega[a].value(), want[a] + 2.5 * dlog, 1e-9 * std::max(1.0, std::abs(want[a])));
  }
}

TEST(Omega, ConstantFlatIsZero) {
  const PointFrame pf = normalize_connection(flat_spec(), {1, 1, 1}, 2);
  const auto w = omega_of(constant_jets(Sym2Contra<double>::diagonal(2, 1, 3), 2), pf.gamma);
  for (int a = 0; a < 3; ++a) EXPECT_EQ(w[a].max_abs(), 0.0);
  const auto [abs, relative] = final_residual_at(constant_jets(Sym2Contra<double>::identity(), 2), pf.gamma);
  EXPECT_EQ(abs, 0.0);
}

TEST(ScaleTest, NonClosedOmegaDetected) {
  // Gamma = 0, sigma-hat = diag(exp(2xy), 1, 1): omega = (y, 2x, 0), curl 1.
  Sym2Contra<Expr> s = zero_sym();
  s(0, 0) = parse("exp(2*x*y)");
  s(1, 1) = Expr::constant(1.0);
  s(2, 2) = Expr::constant(1.0);
  const ScaleFieldAccessor field = [&](const Point& q) -> std::optional<ScaleField> {
    return ScaleField{jets(s, q, 2), normalize_connection(flat_spec(), q, 2).gamma};
  };
  const Point p{0.5, 0.7, 0.2};
  const ScaleTestResult r = scale_test(field, probe_points(p, 0.25));
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.samples.size(), 9u);
  EXPECT_NEAR(r.samples[0].omega[0].value(), 0.7, 1e-14);
  EXPECT_NEAR(r.samples[0].omega[1].value(), 1.0, 1e-14);
  EXPECT_NEAR(r.samples[0].omega[2].value(), 0.0, 1e-14);
  EXPECT_NEAR(r.max_exactness, 1.0, 1e-12);
}

TEST(ScaleTest, FixtureProbesAreExact) {
  const Point p{1, 1, 1};
  const Verdict v = decide(oracle::fixture(), p);
  ASSERT_TRUE(v.metrisable());
  const auto& m = std::get<Metrisable>(v.outcome);
  EXPECT_LT(m.max_final_relative, 1e-8);
  EXPECT_LT(m.max_exactness, 1e-10);
  EXPECT_EQ(v.trace.branches.back().probes_used, 9);
}

TEST(Scale, PrintedPotentialRatio) {
  const auto omega = [](const Point& q) {
    const auto w = oracle::printed_omega(q);
    return Covector<double>{{w[0], w[1], w[2]}};
  };
  EXPECT_NEAR(reconstruct_h(omega, {1, 1, 1}, {1, 1, 2}), 1.0 / 9, 1e-12);
  const Point p{0.7, 1.3, 0.9}, q{1.4, 0.6, 1.2};
  EXPECT_NEAR(reconstruct_h(omega, p, q), oracle::printed_h(q) / oracle::printed_h(p), 1e-11);
  EXPECT_EQ(reconstruct_h(omega, p, p), 1.0);
}

TEST(Scale, ZeroOmega) {
  const auto zero = [](const Point&) { return Covector<double>{}; };
  EXPECT_EQ(reconstruct_h(zero, {1, 1, 1}, {2, 3, 4}), 1.0);
}

TEST(Metric, ScalesInverselyWithFourthPowerOfH) {
  const auto s = Sym2Contra<double>::diagonal(2, 3, 5);
  const Epsilon<double> eps(1.5);
  const auto g1 = metric_from(s, 1.0, eps), g2 = metric_from(s, 2.0, eps);
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(g2.c[k], g1.c[k] / 16, 1e-15);
  EXPECT_NEAR(g1(0, 0), 0.5 / (6 * 2.25 * 30), 1e-15);
}

TEST(Decide, FixtureIsMetrisable) {
  SolverOptions opt;
  opt.metric_points = deterministic_points(4, 3);
  const Verdict v = decide(oracle::fixture(), {1, 1, 1}, opt);
  ASSERT_TRUE(v.metrisable()) << outcome_reason(v.outcome);
  const auto& m = std::get<Metrisable>(v.outcome);
  ASSERT_EQ(m.metric.size(), 5u);
  for (const auto& s : m.metric) {
    const double x = s.point[0], y = s.point[1], z = s.point[2];
    const double w2 = std::pow((x * y + z) * z, 2);
    EXPECT_LT(rel(s.g(0, 0) / s.g(1, 1), w2), 1e-6);
    EXPECT_LT(rel(s.g(2, 2), s.g(1, 1)), 1e-6);
    EXPECT_LT(std::abs(s.g(0, 1)) + std::abs(s.g(0, 2)) + std::abs(s.g(1, 2)), 1e-8 * std::abs(s.g(1, 1)));
  }
  EXPECT_EQ(m.metric.front().h, 1.0);
}

TEST(Decide, SigmaHatAtBaseIsPrintedShape) {
  const Verdict v = decide(oracle::fixture(), {1, 1, 1});
  ASSERT_TRUE(v.metrisable());
  const auto s = values(std::get<Metrisable>(v.outcome).solution.sigma_hat);
  EXPECT_NEAR(s(1, 1) / s(0, 0), 4.0, 1e-9);
  EXPECT_NEAR(s(2, 2) / s(0, 0), 4.0, 1e-9);
  EXPECT_NEAR(s(0, 1) / s(0, 0), 0.0, 1e-9);
}

TEST(Decide, Flat) {
  const Verdict v = decide(flat_spec(), {1, 2, 3});
  EXPECT_TRUE(std::holds_alternative<ProjectivelyFlat>(v.outcome));
}

TEST(Decide, RejectsLowOrder) {
  SolverOptions opt;
  opt.order = 3;
  EXPECT_THROW(decide(flat_spec(), {1, 1, 1}, opt), std::invalid_argument);
}

TEST(Decide, DomainErrorEscapes) {
  EXPECT_THROW(decide(oracle::fixture(), {1, 1, 0}), EvalError);
}

TEST(Decide, PerturbedFixtureIsRejectedDeterministically) {
  const ConnectionSpec s = perturbed_fixture();
  const Verdict a = decide(s, {1, 1, 1}), b = decide(s, {1, 1, 1});
  EXPECT_EQ(outcome_name(a.outcome), "NotMetrisable");
  EXPECT_EQ(outcome_reason(a.outcome), "QNonzero");
  EXPECT_EQ(a.trace.gate, PointGate::QNonzero);
  EXPECT_EQ(outcome_reason(b.outcome), outcome_reason(a.outcome));
  EXPECT_EQ(a.trace.q_norm, b.trace.q_norm);
  // direct evaluation of Q on the perturbed connection
  const PointFrame f = build_point_frame(s, {1, 1, 1}, 2);
  const auto v = values(f.weyl);
  const double q = oracle::brute_q_max([&](int i, int j, int k) { return v(i, j, k); }, f.eps.lower_scale.value());
  EXPECT_GT(q, a.trace.q_threshold);
  EXPECT_NEAR(q, a.trace.q_norm, 1e-12 * q);
}

TEST(Decide, EntirelyDegeneratePencil) {
  // V spanned by two matrices with vanishing third row and column.
  Sym2Contra<double> r, s;
  r(0, 0) = 1;
  r(0, 1) = 0.5;
  s(1, 1) = 1;
  s(0, 1) = -0.3;
  const int order = 2;
  const Epsilon<Jet> eps(Jet::constant(1.0, order));
  const auto v0 = weyl_from_pencil(r, s, Epsilon<double>(1.0));
  Tensor3Mixed<Jet> v;
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 3; ++k) v.c[i][k] = Jet::constant(v0.c[i][k], order);
  const auto q = q_obstruction(v, eps);
  PointAnalysis a;
  a.gate = gate_point(v, q, eps, 1.0, kDefaultTol, a);
  EXPECT_EQ(a.gate, PointGate::EntirelyDegenerate);
  const auto o = gate_outcome(a);
  ASSERT_TRUE(o.has_value());
  EXPECT_EQ(outcome_reason(*o), "PencilEntirelyDegenerate");
}

TEST(Decide, IrregularPencilIsIndeterminate) {
  // rho = diag(1,0,0), sigma = diag(0,1,1): det(s rho + t sigma) = s t^2.
  const auto v0 = weyl_from_pencil(Sym2Contra<double>::diagonal(1, 0, 0), Sym2Contra<double>::diagonal(0, 1, 1),
                                   Epsilon<double>(1.0));
  Tensor3Mixed<Jet> v;
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 3; ++k) v.c[i][k] = Jet::constant(v0.c[i][k], 2);
  const Epsilon<Jet> eps(Jet::constant(1.0, 2));
  PointAnalysis a;
  a.gate = gate_point(v, q_obstruction(v, eps), eps, 1.0, kDefaultTol, a);
  EXPECT_EQ(a.gate, PointGate::Irregular);
  EXPECT_EQ(outcome_name(*gate_outcome(a)), "Indeterminate");
}

TEST(Decide, GaugeInvariance) {
  SolverOptions opt;
  opt.metric_points = deterministic_points(2, 4);
  const Verdict plain = decide(oracle::fixture(), {1, 1, 1}, opt);
  opt.gauge = [](const Point& q, int order) -> std::array<Jet, 3> {
    const Expr a = parse("1 + 0.3*x*y"), b = parse("-exp(0.2*z)"), c = parse("2 + sin(x)");
    return {jet_of(a, q, order), jet_of(b, q, order), jet_of(c, q, order)};
  };
  const Verdict gauged = decide(oracle::fixture(), {1, 1, 1}, opt);
  ASSERT_TRUE(plain.metrisable());
  ASSERT_TRUE(gauged.metrisable());
  const auto& m0 = std::get<Metrisable>(plain.outcome).metric;
  const auto& m1 = std::get<Metrisable>(gauged.outcome).metric;
  ASSERT_EQ(m0.size(), m1.size());
  const double ratio = m1[0].g(1, 1) / m0[0].g(1, 1);
  for (std::size_t i = 0; i < m0.size(); ++i)
    for (int d = 0; d < 3; ++d) EXPECT_LT(rel(m1[i].g(d, d), ratio * m0[i].g(d, d)), 1e-8);
}

TEST(Decide, ProjectiveChangeGivesProjectivelyEquivalentMetric) {
  // Levi-Civita connection of the metric minus the input connection has the
  // form delta_a^c beta_b + delta_b^c beta_a.  Derivatives of g come from a
  // fourth-order central stencil of metric samples.
  ConnectionSpec changed = oracle::fixture();
  const std::array<Expr, 3> ups = {parse("y*z"), parse("sin(x)"), parse("1/(1+x^2+z^2)")};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      changed.gamma[a][b][a] = changed.gamma[a][b][a] + ups[b];
      changed.gamma[a][b][b] = changed.gamma[a][b][b] + ups[a];
    }
  const double step = 0.02;
  for (const Point& p : deterministic_points(5, 5)) {
    SolverOptions opt;
    for (int i = 0; i < 3; ++i)
      for (double m : {-2.0, -1.0, 1.0, 2.0}) {
        Point q = p;
        q[i] += m * step;
        opt.metric_points.push_back(q);
      }
    const Verdict v0 = decide(oracle::fixture(), p, opt);
    const Verdict v1 = decide(changed, p, opt);
    ASSERT_TRUE(v0.metrisable());
    ASSERT_TRUE(v1.metrisable());
    const auto& ms = std::get<Metrisable>(v1.outcome).metric;
    const Sym2Cov<double> g = ms[0].g;
    std::array<Sym2Cov<double>, 3> dg;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 6; ++k) {
        const auto& s = ms.begin() + 1 + 4 * i;
        dg[i].c[k] = (s[0].g.c[k] - 8 * s[1].g.c[k] + 8 * s[2].g.c[k] - s[3].g.c[k]) / (12 * step);
      }
    const Sym2Contra<double> gi = inverse(g);
    double diff[3][3][3];
    double scale = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          double lc = 0;
          for (int d = 0; d < 3; ++d) lc += 0.5 * gi(c, d) * (dg[a](b, d) + dg[b](a, d) - dg[d](a, b));
          diff[a][b][c] = lc - eval(oracle::fixture().gamma[a][b][c], p);
          scale = std::max(scale, std::abs(lc));
        }
    std::array<double, 3> beta{};
    for (int a = 0; a < 3; ++a)
      for (int d = 0; d < 3; ++d) beta[a] += diff[a][d][d] / 4;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          const double proj = (a == c ? beta[b] : 0.0) + (b == c ? beta[a] : 0.0);
          EXPECT_LT(std::abs(diff[a][b][c] - proj), 1e-5 * scale);
        }
  }
}

TEST(Decide, MetricSolvesTheEquation) {
  // sigma^{ab} recovered from g alone: g = s^-1 / det_eps(s) gives
  // det s = (216 e^6 det g)^(-1/4) and s = g^-1 / (6 e^2 det s).
  const Point p{1.1, 0.8, 1.2};
  const double step = 0.02;
  SolverOptions opt;
  for (int i = 0; i < 3; ++i)
    for (double m : {-2.0, -1.0, 1.0, 2.0}) {
      Point q = p;
      q[i] += m * step;
      opt.metric_points.push_back(q);
    }
  const ConnectionSpec spec = oracle::fixture();
  const Verdict v = decide(spec, p, opt);
  ASSERT_TRUE(v.metrisable());
  const auto& ms = std::get<Metrisable>(v.outcome).metric;
  auto sigma_of = [&](const MetricSample& s) {
    const double e = eval(spec.epsilon, s.point);
    const double dets = std::pow(216 * std::pow(e, 6) * std::abs(det(s.g)), -0.25);
    return inverse(s.g) * (1.0 / (6 * e * e * dets));
  };
  Sym2Contra<Jet> sigma;
  const Sym2Contra<double> s0 = sigma_of(ms[0]);
  for (int k = 0; k < 6; ++k) {
    std::vector<double> c(4);
    c[0] = s0.c[k];
    for (int i = 0; i < 3; ++i) {
      const auto& s = ms.begin() + 1 + 4 * i;
      c[1 + i] = (sigma_of(s[0]).c[k] - 8 * sigma_of(s[1]).c[k] + 8 * sigma_of(s[2]).c[k] - sigma_of(s[3]).c[k]) /
                 (12 * step);
    }
    sigma.c[k] = Jet::from_coefficients(c, 1);
  }
  for (int k = 0; k < 6; ++k) EXPECT_LT(rel(s0.c[k], ms[0].sigma.c[k]) * (s0.c[k] != 0), 1e-9);
  const PointFrame f = normalize_connection(spec, p, 1);
  const auto [abs, scale] = metrisability_residual_at(f.gamma, sigma);
  EXPECT_LT(abs / scale, 1e-6);
}

TEST(Decide, Deterministic) {
  SolverOptions opt;
  opt.metric_points = {{1.2, 0.9, 1.1}};
  const Verdict a = decide(oracle::fixture(), {1, 1, 1}, opt), b = decide(oracle::fixture(), {1, 1, 1}, opt);
  ASSERT_TRUE(a.metrisable());
  const auto& ma = std::get<Metrisable>(a.outcome);
  const auto& mb = std::get<Metrisable>(b.outcome);
  for (std::size_t i = 0; i < ma.metric.size(); ++i)
    for (int k = 0; k < 6; ++k) EXPECT_EQ(ma.metric[i].g.c[k], mb.metric[i].g.c[k]);
  ASSERT_EQ(a.trace.branches.size(), b.trace.branches.size());
  for (std::size_t i = 0; i < a.trace.branches.size(); ++i) {
    EXPECT_EQ(a.trace.branches[i].phi, b.trace.branches[i].phi);
    EXPECT_EQ(a.trace.branches[i].max_exactness, b.trace.branches[i].max_exactness);
  }
}
