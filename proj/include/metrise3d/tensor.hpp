#pragma once

// Fixed-size tensor algebra in three dimensions over a scalar type S (double
// or Jet).  Index position is part of the type: Up marks contravariant and
// Down covariant slots, so sigma^{ab} and sigma_{ab} cannot be confused.

#include <array>
#include <cmath>
#include <stdexcept>

#include "metrise3d/jet.hpp"

namespace metrise3d {

struct Up {};
struct Down {};

template <class F>
using Dual = std::conditional_t<std::is_same_v<F, Up>, Down, Up>;

/// Storage slot of the symmetric pair (i, j): 00 11 22 01 02 12.
constexpr int sym_slot(int i, int j) {
  if (i == j) return i;
  if (i > j) std::swap(i, j);
  return i == 0 ? (j == 1 ? 3 : 4) : 5;
}

inline constexpr std::array<std::array<int, 2>, 6> kSymPairs = {
    {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}}};

/// Symmetric 2-tensor with both indices in flavor F.
template <class S, class F>
struct Sym2 {
  std::array<S, 6> c{};

  S& operator()(int i, int j) { return c[sym_slot(i, j)]; }
  const S& operator()(int i, int j) const { return c[sym_slot(i, j)]; }

  static Sym2 identity() {
    Sym2 s;
    for (int i = 0; i < 3; ++i) s(i, i) = S(1.0);
    return s;
  }
  static Sym2 diagonal(const S& a, const S& b, const S& d) {
    Sym2 s;
    s(0, 0) = a;
    s(1, 1) = b;
    s(2, 2) = d;
    return s;
  }

  Sym2& operator+=(const Sym2& o) {
    for (int k = 0; k < 6; ++k) c[k] += o.c[k];
    return *this;
  }
  Sym2& operator-=(const Sym2& o) {
    for (int k = 0; k < 6; ++k) c[k] -= o.c[k];
    return *this;
  }
  template <class T>
  Sym2& operator*=(const T& s) {
    for (int k = 0; k < 6; ++k) c[k] = c[k] * s;
    return *this;
  }
  friend Sym2 operator+(Sym2 a, const Sym2& b) { return a += b; }
  friend Sym2 operator-(Sym2 a, const Sym2& b) { return a -= b; }
  friend Sym2 operator-(Sym2 a) { return a *= -1.0; }
  friend Sym2 operator*(Sym2 a, const S& s) { return a *= s; }
  friend Sym2 operator*(const S& s, Sym2 a) { return a *= s; }
  friend Sym2 operator*(Sym2 a, double s) requires(!std::is_same_v<S, double>) { return a *= s; }
  friend Sym2 operator*(double s, Sym2 a) requires(!std::is_same_v<S, double>) { return a *= s; }
};

template <class S>
using Sym2Contra = Sym2<S, Up>;
template <class S>
using Sym2Cov = Sym2<S, Down>;

template <class S, class F>
struct Vec3 {
  std::array<S, 3> c{};
  S& operator[](int i) { return c[i]; }
  const S& operator[](int i) const { return c[i]; }
};

template <class S>
using Vector = Vec3<S, Up>;
template <class S>
using Covector = Vec3<S, Down>;

/// A^{ab}{}_c (F = Up) or A_{ab}{}^c (F = Down), symmetric in the pair (a, b).
/// The same layout holds D_a{}^{bc} = nabla_a sigma^{bc} with the pair (b, c)
/// and the single lower index a.
template <class S, class F>
struct Tensor3 {
  std::array<std::array<S, 3>, 6> c{};  // [pair slot][single index]

  S& operator()(int a, int b, int k) { return c[sym_slot(a, b)][k]; }
  const S& operator()(int a, int b, int k) const { return c[sym_slot(a, b)][k]; }

  Tensor3& operator+=(const Tensor3& o) {
    for (int s = 0; s < 6; ++s)
      for (int k = 0; k < 3; ++k) c[s][k] += o.c[s][k];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    for (int s = 0; s < 6; ++s)
      for (int k = 0; k < 3; ++k) c[s][k] -= o.c[s][k];
    return *this;
  }
  template <class T>
  Tensor3& operator*=(const T& x) {
    for (int s = 0; s < 6; ++s)
      for (int k = 0; k < 3; ++k) c[s][k] = c[s][k] * x;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
};

template <class S>
using Tensor3Mixed = Tensor3<S, Up>;  // V^{ab}_c, (nabla_a sigma^{bc})
template <class S>
using Tensor3MixedLower = Tensor3<S, Down>;  // Q_{ab}^c

/// Levi-Civita symbols with epsilon_{123} = s and epsilon^{123} = 1/s, so that
/// epsilon^{abc} epsilon_{abc} = 6.
template <class S>
struct Epsilon {
  S lower_scale = S(1.0);
  S upper_scale = S(1.0);

  Epsilon() = default;
  explicit Epsilon(const S& s) : lower_scale(s), upper_scale(S(1.0) / s) {}

  static int sign(int i, int j, int k) {
    if (i == j || j == k || i == k) return 0;
    return ((i + 1) % 3 == j) ? 1 : -1;
  }
  S lower(int i, int j, int k) const {
    const int s = sign(i, j, k);
    return s == 0 ? S(0.0) : lower_scale * static_cast<double>(s);
  }
  S upper(int i, int j, int k) const {
    const int s = sign(i, j, k);
    return s == 0 ? S(0.0) : upper_scale * static_cast<double>(s);
  }
};

// ---------------------------------------------------------------------------
// Determinants and inverses

/// Ordinary determinant of the component matrix.
template <class S, class F>
S det(const Sym2<S, F>& m) {
  return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(1, 2)) -
         m(0, 1) * (m(0, 1) * m(2, 2) - m(1, 2) * m(0, 2)) +
         m(0, 2) * (m(0, 1) * m(1, 2) - m(1, 1) * m(0, 2));
}

/// Classical adjugate; adj(m) m = det(m) Id.  The result keeps the flavor of
/// m; inverse() re-labels it.
template <class S, class F>
Sym2<S, F> adjugate(const Sym2<S, F>& m) {
  Sym2<S, F> a;
  a(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(1, 2);
  a(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(0, 2);
  a(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(0, 1);
  a(0, 1) = m(0, 2) * m(1, 2) - m(0, 1) * m(2, 2);
  a(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  a(1, 2) = m(0, 1) * m(0, 2) - m(0, 0) * m(1, 2);
  return a;
}

/// Inverse via adjugate / det; sigma^{ab} sigma_{bc} = delta^a_c.
template <class S, class F>
Sym2<S, Dual<F>> inverse(const Sym2<S, F>& m) {
  const S d = det(m);
  if (value_of(d) == 0.0) throw std::domain_error("singular symmetric tensor");
  const S inv = S(1.0) / d;
  const Sym2<S, F> a = adjugate(m);
  Sym2<S, Dual<F>> r;
  for (int k = 0; k < 6; ++k) r.c[k] = a.c[k] * inv;
  return r;
}

/// tau^{ab} tau^{cd} tau^{ef} eps_{ace} eps_{bdf} = 6 s^2 det(tau), where
/// s = eps_{123}.  With s = 1 this is 6 times the ordinary determinant.
template <class S>
S det_epsilon(const Sym2Contra<S>& m, const Epsilon<S>& eps) {
  return det(m) * eps.lower_scale * eps.lower_scale * 6.0;
}
/// Covariant flavor: tau_{ab} tau_{cd} tau_{ef} eps^{ace} eps^{bdf} = 6 det / s^2.
template <class S>
S det_epsilon(const Sym2Cov<S>& m, const Epsilon<S>& eps) {
  return det(m) * eps.upper_scale * eps.upper_scale * 6.0;
}

// ---------------------------------------------------------------------------
// Contractions

/// T_{ab} s^{ab}
template <class S, class F>
S contract(const Sym2<S, F>& t, const Sym2<S, Dual<F>>& s) {
  S r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r += t(i, j) * s(i, j);
  return r;
}

/// sigma^{ab} xi_b (or sigma_{ab} X^b)
template <class S, class F>
Vec3<S, F> contract(const Sym2<S, F>& m, const Vec3<S, Dual<F>>& v) {
  Vec3<S, F> r;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r[a] += m(a, b) * v[b];
  return r;
}

/// X^a xi_a
template <class S, class F>
S contract(const Vec3<S, F>& x, const Vec3<S, Dual<F>>& w) {
  return x[0] * w[0] + x[1] * w[1] + x[2] * w[2];
}

/// xi_a xi_b, symmetric square
template <class S, class F>
Sym2<S, F> outer(const Vec3<S, F>& v) {
  Sym2<S, F> r;
  for (const auto& [i, j] : kSymPairs) r(i, j) = v[i] * v[j];
  return r;
}

/// delta_a^a in three dimensions.
inline constexpr double kDeltaTrace = 3.0;

/// Frobenius norm squared of the value parts, counting off-diagonal entries
/// twice (the matrix norm).
template <class S, class F>
double frobenius2_value(const Sym2<S, F>& m) {
  double s = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += value_of(m(i, j)) * value_of(m(i, j));
  return s;
}

template <class S, class F>
S frobenius2(const Sym2<S, F>& m) {
  S s{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += m(i, j) * m(i, j);
  return s;
}

/// Trace-free part of D_a{}^{bc}:
///   (D)_o = D_a^{bc} - 1/2 delta_a^{(b} D_d^{c)d}.
/// The result contracts to zero on a = b.
template <class S>
Tensor3Mixed<S> tracefree_project(const Tensor3Mixed<S>& d) {
  std::array<S, 3> t{};  // t^c = D_d^{cd}
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 3; ++k) t[c] += d(c, k, k);
  Tensor3Mixed<S> r = d;
  for (int b = 0; b < 3; ++b)
    for (int c = b; c < 3; ++c)
      for (int a = 0; a < 3; ++a) {
        S corr{};
        if (a == b) corr += t[c];
        if (a == c) corr += t[b];
        if (a == b || a == c) r(b, c, a) -= corr * 0.25;
      }
  return r;
}

/// theta_a s^{bc} as a Tensor3Mixed (pair bc, single a).
template <class S>
Tensor3Mixed<S> tensor_product(const Covector<S>& theta, const Sym2Contra<S>& s) {
  Tensor3Mixed<S> r;
  for (int k = 0; k < 6; ++k)
    for (int a = 0; a < 3; ++a) r.c[k][a] = theta[a] * s.c[k];
  return r;
}

/// sigma_{bc} D_a^{bc}, a covector.
template <class S>
Covector<S> contract_pair(const Sym2Cov<S>& s, const Tensor3Mixed<S>& d) {
  Covector<S> r;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) r[a] += s(b, c) * d(b, c, a);
  return r;
}

/// Largest absolute value part among the components.
template <class S, class F>
double max_abs_value(const Sym2<S, F>& m) {
  double r = 0;
  for (const auto& v : m.c) r = std::max(r, std::abs(value_of(v)));
  return r;
}
template <class S, class F>
double max_abs_value(const Tensor3<S, F>& t) {
  double r = 0;
  for (const auto& row : t.c)
    for (const auto& v : row) r = std::max(r, std::abs(value_of(v)));
  return r;
}

/// Value parts of a jet-valued tensor.
template <class F>
Sym2<double, F> values(const Sym2<Jet, F>& m) {
  Sym2<double, F> r;
  for (int k = 0; k < 6; ++k) r.c[k] = m.c[k].value();
  return r;
}
template <class F>
Vec3<double, F> values(const Vec3<Jet, F>& v) {
  return {{v[0].value(), v[1].value(), v[2].value()}};
}
template <class F>
Tensor3<double, F> values(const Tensor3<Jet, F>& t) {
  Tensor3<double, F> r;
  for (int s = 0; s < 6; ++s)
    for (int k = 0; k < 3; ++k) r.c[s][k] = t.c[s][k].value();
  return r;
}

/// Lifts a real tensor to constant jets of the given order.
template <class F>
Sym2<Jet, F> constant_jets(const Sym2<double, F>& m, int order) {
  Sym2<Jet, F> r;
  for (int k = 0; k < 6; ++k) r.c[k] = Jet::constant(m.c[k], order);
  return r;
}

template <class F>
Sym2<Jet, F> truncate(const Sym2<Jet, F>& m, int order) {
  Sym2<Jet, F> r;
  for (int k = 0; k < 6; ++k) r.c[k] = truncate(m.c[k], order);
  return r;
}
template <class F>
Vec3<Jet, F> truncate(const Vec3<Jet, F>& v, int order) {
  return {{truncate(v[0], order), truncate(v[1], order), truncate(v[2], order)}};
}

inline Epsilon<Jet> truncate(const Epsilon<Jet>& e, int order) {
  Epsilon<Jet> r;
  r.lower_scale = truncate(e.lower_scale, order);
  r.upper_scale = truncate(e.upper_scale, order);
  return r;
}

}  // namespace metrise3d
