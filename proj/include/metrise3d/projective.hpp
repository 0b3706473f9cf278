#pragma once

// Projective invariants of a torsion-free connection at a point: volume
// normalization, curvature, the Weyl tensor V^{ab}_c, the quadratic
// obstruction Q_{ab}^c, and the pencil span{rho, sigma} read off from V.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "metrise3d/expr.hpp"
#include "metrise3d/jet.hpp"
#include "metrise3d/tensor.hpp"

namespace metrise3d {

/// Internal inconsistency or violated precondition inside the pipeline.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gamma[a][b][c] = Gamma_{ab}^c, so that nabla_a X^c = d_a X^c + Gamma_{ab}^c X^b.
template <class S>
using Connection = std::array<std::array<std::array<S, 3>, 3>, 3>;

/// R[d][e][b][c] = R_{de}^b_c with [nabla_d, nabla_e] X^b = R_{de}^b_c X^c.
template <class S>
using Curvature = std::array<std::array<std::array<std::array<S, 3>, 3>, 3>, 3>;

struct ConnectionSpec {
  Connection<Expr> gamma;
  Expr epsilon = Expr::constant(1.0);
};

/// Checks Gamma_{ab}^c = Gamma_{ba}^c by evaluation at deterministic points
/// inside `box` (lo, hi per axis).  Points where either side fails to evaluate
/// are skipped.  Throws std::invalid_argument naming the first asymmetric slot.
inline void check_symmetric(const ConnectionSpec& spec,
                            const std::array<std::array<double, 2>, 3>& box =
                                {{{0.5, 1.5}, {0.5, 1.5}, {0.5, 1.5}}},
                            double tol = 1e-12) {
  std::mt19937_64 rng(20240611);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (int n = 0; n < 8; ++n) {
    Point p;
    for (int i = 0; i < 3; ++i) p[i] = box[i][0] + (box[i][1] - box[i][0]) * unit();
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          double u, v;
          try {
            u = eval(spec.gamma[a][b][c], p);
            v = eval(spec.gamma[b][a][c], p);
          } catch (const EvalError&) {
            continue;
          }
          if (std::abs(u - v) > tol * std::max({1.0, std::abs(u), std::abs(v)}))
            throw std::invalid_argument(
                "gamma is not symmetric in its lower indices at [" +
                std::to_string(a) + "][" + std::to_string(b) + "][" +
                std::to_string(c) + "]");
        }
  }
}

/// Jet-valued projective data at one base point.
struct PointFrame {
  Point point{};
  int order = 0;                 // jet order of gamma and epsilon
  Connection<Jet> gamma;         // normalized so that nabla epsilon = 0
  Covector<Jet> upsilon;         // projective change applied to the input
  Epsilon<Jet> eps;
  double gamma_scale = 0;        // max |coefficient| of the normalized gamma
  double normalization_residual = 0;
  Curvature<Jet> curvature;      // order - 1
  Tensor3Mixed<Jet> weyl;        // V^{ab}_c, order - 1
  Tensor3MixedLower<Jet> q;      // Q_{ab}^c, order - 1
};

/// nabla_a X^c = d_a X^c + Gamma_{ab}^c X^b for symmetric contravariant
/// sigma^{bc}: nabla_a sigma^{bc} = d_a sigma^{bc} + Gamma_{ad}^b sigma^{dc}
/// + Gamma_{ad}^c sigma^{bd}.  The result has one order less than sigma.
inline Tensor3Mixed<Jet> covariant_derivative(const Connection<Jet>& gamma,
                                              const Sym2Contra<Jet>& sigma) {
  const int K = sigma.c[0].order();
  if (K < 1) throw PipelineError("covariant derivative needs jets of order >= 1");
  const int K1 = K - 1;
  Tensor3Mixed<Jet> r;
  for (const auto& [b, c] : kSymPairs)
    for (int a = 0; a < 3; ++a) {
      Jet v = derivative(sigma(b, c), a);
      for (int d = 0; d < 3; ++d) {
        v += truncate(gamma[a][d][b], K1) * truncate(sigma(d, c), K1);
        v += truncate(gamma[a][d][c], K1) * truncate(sigma(b, d), K1);
      }
      r(b, c, a) = v;
    }
  return r;
}

/// Applies Gamma_{ab}^c + delta_a^c Y_b + delta_b^c Y_a.
template <class S>
Connection<S> projective_change(const Connection<S>& gamma, const Covector<S>& ups) {
  Connection<S> r = gamma;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      r[a][b][a] += ups[b];
      r[b][a][a] += ups[b];
    }
  return r;
}

/// Evaluates gamma and epsilon as order-K jets at p and applies the projective
/// change with Y_a = (d_a log eps_{123} - Gamma_{ad}^d) / 4, after which
/// nabla_a eps_{bcd} = 0 in jet arithmetic.
inline PointFrame normalize_connection(const ConnectionSpec& spec, const Point& p,
                                       int order) {
  if (order < 1 || order > kMaxJetOrder)
    throw std::invalid_argument("jet order must be in [1, 4]");
  PointFrame f;
  f.point = p;
  f.order = order;
  Connection<Jet> raw;
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        raw[a][b][c] = jet_of(spec.gamma[a][b][c], p, order);
        raw[b][a][c] = raw[a][b][c];
      }
  const Jet s = jet_of(spec.epsilon, p, order);
  if (s.value() == 0.0)
    throw EvalError("epsilon_123 vanishes at the base point", to_string(spec.epsilon));
  for (int a = 0; a < 3; ++a) {
    Jet dlog = jet_of(differentiate(spec.epsilon, a), p, order) / s;
    Jet trace = raw[a][0][0] + raw[a][1][1] + raw[a][2][2];
    f.upsilon[a] = (dlog - trace) * 0.25;
  }
  f.gamma = projective_change(raw, f.upsilon);
  f.eps = Epsilon<Jet>(s);

  double scale = 0;
  for (const auto& m : f.gamma)
    for (const auto& row : m)
      for (const auto& g : row) scale = std::max(scale, g.max_abs());
  f.gamma_scale = scale;

  // nabla_a eps_{123} = d_a s - Gamma_{ad}^d s
  double resid = 0, ref = s.max_abs();
  for (int a = 0; a < 3; ++a) {
    const Jet ds = derivative(s, a);
    const Jet tr = truncate(f.gamma[a][0][0] + f.gamma[a][1][1] + f.gamma[a][2][2], order - 1);
    const Jet nab = ds - tr * truncate(s, order - 1);
    resid = std::max(resid, nab.max_abs());
    ref = std::max(ref, ds.max_abs());
  }
  f.normalization_residual = ref > 0 ? resid / ref : resid;
  if (f.normalization_residual > 1e-10)
    throw PipelineError("volume normalization failed: residual " +
                        std::to_string(f.normalization_residual));
  return f;
}

/// Curvature R_{de}^b_c = d_d Gamma_{ec}^b - d_e Gamma_{dc}^b
///                        + Gamma_{df}^b Gamma_{ec}^f - Gamma_{ef}^b Gamma_{dc}^f.
inline Curvature<Jet> curvature(const Connection<Jet>& gamma, int order) {
  const int K1 = order - 1;
  Connection<Jet> g;
  std::array<Connection<Jet>, 3> dg;  // dg[d][e][c][b] = d_d Gamma_{ec}^b
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        g[a][b][c] = truncate(gamma[a][b][c], K1);
        for (int d = 0; d < 3; ++d) dg[d][a][b][c] = derivative(gamma[a][b][c], d);
      }
  Curvature<Jet> r;
  for (int d = 0; d < 3; ++d)
    for (int e = 0; e < 3; ++e)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          Jet v = dg[d][e][c][b] - dg[e][d][c][b];
          for (int f = 0; f < 3; ++f)
            v += g[d][f][b] * g[e][c][f] - g[e][f][b] * g[d][c][f];
          r[d][e][b][c] = v;
        }
  return r;
}

/// V^{ab}_c = eps^{de(a} R_{de}^{b)}_c with its (already vanishing, up to
/// rounding) traces removed.
inline Tensor3Mixed<Jet> weyl_tensor(const Curvature<Jet>& r, const Epsilon<Jet>& eps_in) {
  const Epsilon<Jet> eps = truncate(eps_in, r[0][0][0][0].order());
  Tensor3Mixed<Jet> w;
  for (const auto& [a, b] : kSymPairs)
    for (int c = 0; c < 3; ++c) {
      Jet v;
      for (int d = 0; d < 3; ++d)
        for (int e = 0; e < 3; ++e) {
          if (Epsilon<Jet>::sign(d, e, a) != 0) v += eps.upper(d, e, a) * r[d][e][b][c];
          if (Epsilon<Jet>::sign(d, e, b) != 0) v += eps.upper(d, e, b) * r[d][e][a][c];
        }
      w(a, b, c) = v * 0.5;
    }
  std::array<Jet, 3> tr;  // W^{da}_d
  for (int a = 0; a < 3; ++a)
    for (int d = 0; d < 3; ++d) tr[a] += w(d, a, d);
  Tensor3Mixed<Jet> v = w;
  for (const auto& [a, b] : kSymPairs)
    for (int c = 0; c < 3; ++c) {
      Jet corr;
      if (c == a) corr += tr[b];
      if (c == b) corr += tr[a];
      if (c == a || c == b) v(a, b, c) -= corr * 0.25;
    }
  return v;
}

inline Tensor3Mixed<Jet> weyl_tensor(PointFrame& frame) {
  frame.curvature = curvature(frame.gamma, frame.order);
  frame.weyl = weyl_tensor(frame.curvature, frame.eps);
  return frame.weyl;
}

/// Q_{ab}^c = eps_{pq(a} V^{pr}_{b)} V^{qc}_r.
template <class S>
Tensor3MixedLower<S> q_obstruction(const Tensor3Mixed<S>& v, const Epsilon<S>& eps) {
  Tensor3MixedLower<S> q;
  for (const auto& [a, b] : kSymPairs)
    for (int c = 0; c < 3; ++c) {
      S sum{};
      for (int p = 0; p < 3; ++p)
        for (int qq = 0; qq < 3; ++qq) {
          const int sa = Epsilon<S>::sign(p, qq, a), sb = Epsilon<S>::sign(p, qq, b);
          if (sa == 0 && sb == 0) continue;
          S inner_a{}, inner_b{};
          for (int r = 0; r < 3; ++r) {
            if (sa) inner_a += v(p, r, b) * v(qq, c, r);
            if (sb) inner_b += v(p, r, a) * v(qq, c, r);
          }
          if (sa) sum += eps.lower(p, qq, a) * inner_a;
          if (sb) sum += eps.lower(p, qq, b) * inner_b;
        }
      q(a, b, c) = sum * 0.5;
    }
  return q;
}

/// V^{ab}_c = rho^{d(a} sigma^{b)e} eps_{cde}, the simple Weyl tensor spanned
/// by a pencil.
template <class S>
Tensor3Mixed<S> weyl_from_pencil(const Sym2Contra<S>& rho, const Sym2Contra<S>& sigma,
                                 const Epsilon<S>& eps) {
  Tensor3Mixed<S> v;
  for (const auto& [a, b] : kSymPairs)
    for (int c = 0; c < 3; ++c) {
      S sum{};
      for (int d = 0; d < 3; ++d)
        for (int e = 0; e < 3; ++e) {
          if (Epsilon<S>::sign(c, d, e) == 0) continue;
          sum += eps.lower(c, d, e) * (rho(d, a) * sigma(b, e) + rho(d, b) * sigma(a, e));
        }
      v(a, b, c) = sum * 0.5;
    }
  return v;
}

/// The probe map S(T)^{bc} = 2 T_{ad} V^{a(b}_e eps^{c)de}.
template <class S>
Sym2Contra<S> probe_image(const Sym2Cov<S>& t, const Tensor3Mixed<S>& v,
                          const Epsilon<S>& eps) {
  Sym2Contra<S> out;
  for (const auto& [b, c] : kSymPairs) {
    S sum{};
    for (int a = 0; a < 3; ++a)
      for (int d = 0; d < 3; ++d)
        for (int e = 0; e < 3; ++e) {
          if (Epsilon<S>::sign(c, d, e) != 0)
            sum += t(a, d) * v(a, b, e) * eps.upper(c, d, e);
          if (Epsilon<S>::sign(b, d, e) != 0)
            sum += t(a, d) * v(a, c, e) * eps.upper(b, d, e);
        }
    out(b, c) = sum;
  }
  return out;
}

/// Two jet-valued elements spanning the pencil determined by a simple V.
struct PencilSpan {
  Sym2Contra<Jet> rho_raw;
  Sym2Contra<Jet> sigma_raw;
  std::array<int, 2> probes{};  // indices into the probe sequence
  double gram = 0;              // Gram determinant of the normalized pair
  double consistency = 0;       // proportionality residual of the rebuilt V
};

namespace detail {

/// Deterministic probe sequence: the six elementary symmetric matrices, then
/// pseudorandom entries in [-1, 1] from a fixed seed.
inline std::vector<Sym2Cov<double>> probe_sequence(int count) {
  std::vector<Sym2Cov<double>> probes;
  for (const auto& [i, j] : kSymPairs) {
    Sym2Cov<double> t;
    t(i, j) = 1.0;
    probes.push_back(t);
  }
  std::mt19937_64 rng(0x6d65747269736533ULL);
  while (static_cast<int>(probes.size()) < count) {
    Sym2Cov<double> t;
    for (auto& v : t.c) v = 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0;
    probes.push_back(t);
  }
  probes.resize(count);
  return probes;
}

template <class F>
double frobenius_dot(const Sym2<double, F>& a, const Sym2<double, F>& b) {
  double s = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += a(i, j) * b(i, j);
  return s;
}

}  // namespace detail

inline constexpr int kMaxPencilProbes = 20;

/// Max-abs ratio residual of `rebuilt` against `v` after fitting one scalar.
template <class F>
double proportionality_residual(const Tensor3<double, F>& rebuilt,
                                const Tensor3<double, F>& v) {
  double vv = 0, rv = 0, rmax = 0;
  for (int s = 0; s < 6; ++s)
    for (int k = 0; k < 3; ++k) {
      vv += v.c[s][k] * v.c[s][k];
      rv += rebuilt.c[s][k] * v.c[s][k];
      rmax = std::max(rmax, std::abs(rebuilt.c[s][k]));
    }
  if (vv == 0 || rmax == 0) return 1.0;
  const double lambda = rv / vv;
  double resid = 0;
  for (int s = 0; s < 6; ++s)
    for (int k = 0; k < 3; ++k)
      resid = std::max(resid, std::abs(rebuilt.c[s][k] - lambda * v.c[s][k]));
  return resid / rmax;
}

/// Reads span{rho, sigma} off a simple V via the probe map.  Requires V to be
/// nonzero and Q to vanish.
inline PencilSpan extract_pencil(const Tensor3Mixed<Jet>& weyl, const Epsilon<Jet>& eps_in,
                                 double tol = 1e-9) {
  const Epsilon<Jet> eps = truncate(eps_in, weyl.c[0][0].order());
  const Tensor3Mixed<double> v0 = values(weyl);
  const double vmax = max_abs_value(v0);
  if (vmax == 0.0) throw PipelineError("extract_pencil: V vanishes at the base point");
  const Epsilon<double> eps0(eps.lower_scale.value());

  const auto probes = detail::probe_sequence(kMaxPencilProbes);
  std::vector<Sym2Contra<double>> images;
  std::vector<double> norms;
  const double image_scale = vmax * std::abs(eps0.upper_scale) * 4.0;
  int first = -1, second = -1;
  double best_gram = 0;
  for (int k = 0; k < kMaxPencilProbes; ++k) {
    images.push_back(probe_image(probes[k], v0, eps0));
    norms.push_back(std::sqrt(frobenius2_value(images.back())));
    // Decide once the elementary probes are in, then after every random one.
    if (k < 5) continue;
    first = static_cast<int>(std::max_element(norms.begin(), norms.end()) - norms.begin());
    if (norms[first] <= tol * image_scale) continue;
    best_gram = 0;
    second = -1;
    for (int j = 0; j <= k; ++j) {
      if (j == first || norms[j] <= tol * image_scale) continue;
      const double c = detail::frobenius_dot(images[first], images[j]) / (norms[first] * norms[j]);
      const double g = 1.0 - c * c;
      if (g > best_gram) {
        best_gram = g;
        second = j;
      }
    }
    if (best_gram > 1e-6) break;
  }
  if (first < 0 || second < 0 || best_gram <= 1e-6)
    throw PipelineError("extract_pencil: probe images have rank < 2 (V not simple?)");

  PencilSpan span;
  span.probes = {first, second};
  span.gram = best_gram;
  span.rho_raw = probe_image(constant_jets(probes[first], weyl.c[0][0].order()), weyl, eps);
  span.sigma_raw = probe_image(constant_jets(probes[second], weyl.c[0][0].order()), weyl, eps);
  span.rho_raw *= 1.0 / norms[first];
  span.sigma_raw *= 1.0 / norms[second];

  const Tensor3Mixed<double> rebuilt =
      weyl_from_pencil(values(span.rho_raw), values(span.sigma_raw), eps0);
  span.consistency = proportionality_residual(rebuilt, v0);
  if (span.consistency > 1e-8)
    throw PipelineError("extract_pencil: rebuilt V is not proportional to V (residual " +
                        std::to_string(span.consistency) + ")");
  return span;
}

inline PencilSpan extract_pencil(const PointFrame& frame, double tol = 1e-9) {
  return extract_pencil(frame.weyl, frame.eps, tol);
}

/// Normalizes the connection and computes curvature, V and Q.
inline PointFrame build_point_frame(const ConnectionSpec& spec, const Point& p, int order) {
  if (order < 2) throw std::invalid_argument("point frames need jet order >= 2");
  PointFrame f = normalize_connection(spec, p, order);
  weyl_tensor(f);
  f.q = q_obstruction(f.weyl, truncate(f.eps, order - 1));
  return f;
}

// ---------------------------------------------------------------------------
// Metrisability equation residual

struct ResidualReport {
  std::vector<Point> points;
  std::vector<double> absolute;  // max |(nabla sigma)_o| per point
  std::vector<double> relative;  // absolute / magnitude of the summed terms
  double max_absolute = 0;
  double max_relative = 0;
};

/// max |(nabla_a sigma^{bc})_o| at the base point, and the largest magnitude
/// among the terms that make up nabla sigma (for relative comparisons).
inline std::pair<double, double> metrisability_residual_at(const Connection<Jet>& gamma,
                                                           const Sym2Contra<Jet>& sigma) {
  const Tensor3Mixed<Jet> d = covariant_derivative(gamma, sigma);
  const Tensor3Mixed<Jet> tf = tracefree_project(d);
  double scale = 0;
  for (const auto& [b, c] : kSymPairs)
    for (int a = 0; a < 3; ++a) {
      scale = std::max(scale, std::abs(derivative(sigma(b, c), a).value()));
      for (int e = 0; e < 3; ++e)
        scale = std::max(scale, std::abs(gamma[a][e][b].value() * sigma(e, c).value()));
    }
  return {max_abs_value(values(tf)), scale};
}

/// Evaluates (nabla_a sigma^{bc})_o for sigma given in closed form, with the
/// connection normalized against the spec's volume form.
inline ResidualReport verify_metrisability_equation(const ConnectionSpec& spec,
                                                    const Sym2Contra<Expr>& sigma,
                                                    const std::vector<Point>& points) {
  ResidualReport rep;
  for (const Point& p : points) {
    const PointFrame f = normalize_connection(spec, p, 1);
    Sym2Contra<Jet> s;
    for (int k = 0; k < 6; ++k) s.c[k] = jet_of(sigma.c[k], p, 1);
    const auto [abs, scale] = metrisability_residual_at(f.gamma, s);
    const double rel = scale > 0 ? abs / scale : abs;
    rep.points.push_back(p);
    rep.absolute.push_back(abs);
    rep.relative.push_back(rel);
    rep.max_absolute = std::max(rep.max_absolute, abs);
    rep.max_relative = std::max(rep.max_relative, rel);
  }
  return rep;
}

}  // namespace metrise3d
