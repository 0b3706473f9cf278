#pragma once

// Truncated Taylor jets in three variables.
//
// A Jet of order K holds the Taylor coefficients c_alpha = d^alpha f(p) / alpha!
// for every multi-index |alpha| <= K, stored densely in graded-lex order
// (degree ascending; within a degree x-exponent descending, then y).  Because
// the layout is graded, a jet of order K' < K is a prefix of the order-K jet.
//
// A default-constructed jet, or one converted from a double, is "order-free":
// it is a pure constant that adopts the order of whatever it is combined with.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metrise3d {

inline constexpr int kMaxJetOrder = 4;
inline constexpr int kMaxJetSize = 35;

constexpr int jet_size(int order) {
  return (order + 1) * (order + 2) * (order + 3) / 6;
}

class JetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using MultiIndex = std::array<int, 3>;
using Point = std::array<double, 3>;

namespace detail {

struct JetTables {
  std::array<MultiIndex, kMaxJetSize> index{};
  std::array<int, kMaxJetSize> degree{};
  std::array<double, kMaxJetSize> factorial{};  // alpha!
  int lookup[kMaxJetOrder + 1][kMaxJetOrder + 1][kMaxJetOrder + 1];
  struct Term {
    std::uint8_t i, j, k;
  };
  // products[K] lists (i, j, k) with index[i] + index[j] == index[k], |k| <= K.
  std::array<std::vector<Term>, kMaxJetOrder + 1> products;

  JetTables() {
    for (auto& a : lookup)
      for (auto& b : a)
        for (auto& c : b) c = -1;
    int n = 0;
    for (int d = 0; d <= kMaxJetOrder; ++d)
      for (int ex = d; ex >= 0; --ex)
        for (int ey = d - ex; ey >= 0; --ey) {
          int ez = d - ex - ey;
          index[n] = {ex, ey, ez};
          degree[n] = d;
          factorial[n] = fact(ex) * fact(ey) * fact(ez);
          lookup[ex][ey][ez] = n;
          ++n;
        }
    for (int K = 0; K <= kMaxJetOrder; ++K) {
      const int size = jet_size(K);
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          if (degree[i] + degree[j] > K) continue;
          int k = lookup[index[i][0] + index[j][0]][index[i][1] + index[j][1]]
                        [index[i][2] + index[j][2]];
          products[K].push_back({static_cast<std::uint8_t>(i),
                                 static_cast<std::uint8_t>(j),
                                 static_cast<std::uint8_t>(k)});
        }
    }
  }

  static double fact(int n) {
    double r = 1;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
  }
};

inline const JetTables& jet_tables() {
  static const JetTables tables;
  return tables;
}

}  // namespace detail

/// Position of a multi-index in the graded-lex layout, or -1 if its degree
/// exceeds kMaxJetOrder.
inline int jet_index(const MultiIndex& alpha) {
  if (alpha[0] < 0 || alpha[1] < 0 || alpha[2] < 0) return -1;
  if (alpha[0] + alpha[1] + alpha[2] > kMaxJetOrder) return -1;
  return detail::jet_tables().lookup[alpha[0]][alpha[1]][alpha[2]];
}

inline const MultiIndex& jet_multi_index(int i) {
  return detail::jet_tables().index[i];
}

class Jet {
 public:
  static constexpr int kOrderFree = -1;

  Jet() { c_.fill(0.0); }
  Jet(double v) {  // NOLINT(google-explicit-constructor): scalar promotion
    c_.fill(0.0);
    c_[0] = v;
  }

  static Jet constant(double v, int order) {
    Jet j(v);
    j.set_order(order);
    return j;
  }

  /// The jet of the coordinate function x_var at a base point whose var-th
  /// coordinate is `value`.
  static Jet variable(int var, double value, int order) {
    Jet j = constant(value, order);
    if (order >= 1) j.c_[1 + var] = 1.0;
    return j;
  }

  static Jet from_coefficients(std::span<const double> coeffs, int order) {
    if (static_cast<int>(coeffs.size()) != jet_size(order))
      throw JetError("coefficient count does not match jet order");
    Jet j = constant(0.0, order);
    std::copy(coeffs.begin(), coeffs.end(), j.c_.begin());
    return j;
  }

  int order() const { return order_; }
  bool order_free() const { return order_ == kOrderFree; }
  int size() const { return order_free() ? 1 : jet_size(order_); }

  double value() const { return c_[0]; }
  double operator[](int i) const { return c_[i]; }
  double& operator[](int i) { return c_[i]; }
  double coeff(const MultiIndex& alpha) const {
    int i = jet_index(alpha);
    return (i < 0 || i >= size()) ? 0.0 : c_[i];
  }
  std::span<const double> coeffs() const {
    return std::span<const double>(c_.data(), size());
  }

  /// d^alpha f(p), i.e. the coefficient times alpha!.
  double partial(const MultiIndex& alpha) const {
    int i = jet_index(alpha);
    if (i < 0 || i >= size()) return 0.0;
    return c_[i] * detail::jet_tables().factorial[i];
  }

  bool invertible() const { return c_[0] != 0.0; }

  double max_abs() const {
    double m = 0;
    for (double v : coeffs()) m = std::max(m, std::abs(v));
    return m;
  }

  Jet& operator+=(const Jet& o) {
    adopt(o);
    for (int i = 0; i < o.size(); ++i) c_[i] += o.c_[i];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    adopt(o);
    for (int i = 0; i < o.size(); ++i) c_[i] -= o.c_[i];
    return *this;
  }
  Jet& operator*=(double s) {
    for (int i = 0; i < size(); ++i) c_[i] *= s;
    return *this;
  }
  Jet& operator/=(double s) { return *this *= (1.0 / s); }
  Jet& operator*=(const Jet& o) { return *this = *this * o; }
  Jet& operator/=(const Jet& o) { return *this = *this / o; }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator-(Jet a) {
    for (int i = 0; i < a.size(); ++i) a.c_[i] = -a.c_[i];
    return a;
  }
  friend Jet operator*(Jet a, double s) { return a *= s; }
  friend Jet operator*(double s, Jet a) { return a *= s; }
  friend Jet operator/(Jet a, double s) { return a /= s; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    const int K = common_order(a, b);
    if (K == kOrderFree) return Jet(a.c_[0] * b.c_[0]);
    if (a.order_free()) return b * a.c_[0];
    if (b.order_free()) return a * b.c_[0];
    Jet r = constant(0.0, K);
    for (const auto& t : detail::jet_tables().products[K])
      r.c_[t.k] += a.c_[t.i] * b.c_[t.j];
    return r;
  }

  /// Newton iteration y <- y (2 - b y) on the reciprocal; the nilpotent part
  /// doubles its correct degree every step.
  friend Jet reciprocal(const Jet& b) {
    if (!b.invertible()) throw JetError("division by a non-invertible jet");
    if (b.order_free()) return Jet(1.0 / b.c_[0]);
    Jet y = constant(1.0 / b.c_[0], b.order_);
    for (int it = 0; it < newton_steps(b.order_); ++it)
      y = y * (2.0 - b * y);
    return y;
  }

  friend Jet operator/(const Jet& a, const Jet& b) {
    common_order(a, b);
    return a * reciprocal(b);
  }

  friend bool operator==(const Jet& a, const Jet& b) {
    if (a.order_ != b.order_) return false;
    for (int i = 0; i < a.size(); ++i)
      if (a.c_[i] != b.c_[i]) return false;
    return true;
  }

  static int newton_steps(int order) {
    int steps = 1;
    for (int reach = 1; reach < order + 1; reach *= 2) ++steps;
    return steps;  // ceil(log2(K+1)) + 1
  }

  static int common_order(const Jet& a, const Jet& b) {
    if (a.order_free()) return b.order_;
    if (b.order_free()) return a.order_;
    if (a.order_ != b.order_)
      throw JetError("jet order mismatch: " + std::to_string(a.order_) +
                     " vs " + std::to_string(b.order_));
    return a.order_;
  }

 private:
  void set_order(int order) {
    if (order < 0 || order > kMaxJetOrder)
      throw JetError("jet order must be in [0, 4]");
    order_ = order;
  }
  void adopt(const Jet& o) { order_ = common_order(*this, o); }

  std::array<double, kMaxJetSize> c_;
  int order_ = kOrderFree;
};

inline Jet operator+(const Jet& a, double s) { return a + Jet(s); }
inline Jet operator+(double s, const Jet& a) { return Jet(s) + a; }
inline Jet operator-(const Jet& a, double s) { return a - Jet(s); }
inline Jet operator-(double s, const Jet& a) { return Jet(s) - a; }
inline Jet operator/(double s, const Jet& a) { return reciprocal(a) * s; }

/// Drops every coefficient of degree > order.
inline Jet truncate(const Jet& a, int order) {
  if (a.order_free()) return a;
  if (order > a.order())
    throw JetError("cannot raise the order of a jet by truncation");
  return Jet::from_coefficients(a.coeffs().first(jet_size(order)), order);
}

/// Partial derivative with respect to variable `var`; the result has order K-1.
inline Jet derivative(const Jet& a, int var) {
  if (a.order_free()) return Jet(0.0);
  if (a.order() == 0) throw JetError("cannot differentiate an order-0 jet");
  const int K = a.order() - 1;
  Jet r = Jet::constant(0.0, K);
  for (int i = 0; i < jet_size(K); ++i) {
    MultiIndex up = jet_multi_index(i);
    up[var] += 1;
    r[i] = a[jet_index(up)] * up[var];
  }
  return r;
}

/// Evaluates the Taylor polynomial at base + delta.
inline double taylor_eval(const Jet& a, const Point& delta) {
  double s = 0;
  for (int i = 0; i < a.size(); ++i) {
    const MultiIndex& m = jet_multi_index(i);
    s += a[i] * std::pow(delta[0], m[0]) * std::pow(delta[1], m[1]) *
         std::pow(delta[2], m[2]);
  }
  return s;
}

/// f(a) for a univariate f given by taylor[k] = f^(k)(a0) / k!.
inline Jet compose(const Jet& a, std::span<const double> taylor) {
  if (a.order_free()) return Jet(taylor[0]);
  Jet nil = a;
  nil[0] = 0.0;
  Jet result = Jet::constant(taylor[0], a.order());
  Jet power = Jet::constant(1.0, a.order());
  for (int k = 1; k <= a.order(); ++k) {
    power = power * nil;
    result += power * taylor[k];
  }
  return result;
}

inline Jet exp(const Jet& a) {
  std::array<double, kMaxJetOrder + 1> t{};
  double e = std::exp(a.value()), f = 1;
  for (int k = 0; k <= kMaxJetOrder; ++k) {
    t[k] = e / f;
    f *= k + 1;
  }
  return compose(a, t);
}

inline Jet log(const Jet& a) {
  if (a.value() <= 0) throw JetError("log of a jet with nonpositive value");
  std::array<double, kMaxJetOrder + 1> t{};
  t[0] = std::log(a.value());
  for (int k = 1; k <= kMaxJetOrder; ++k)
    t[k] = ((k % 2) ? 1.0 : -1.0) / (k * std::pow(a.value(), k));
  return compose(a, t);
}

inline Jet sqrt(const Jet& a) {
  if (a.value() <= 0) throw JetError("sqrt of a jet with nonpositive value");
  std::array<double, kMaxJetOrder + 1> t{};
  // binomial series of (a0 + n)^(1/2)
  double binom = 1;
  for (int k = 0; k <= kMaxJetOrder; ++k) {
    t[k] = binom * std::pow(a.value(), 0.5 - k);
    binom *= (0.5 - k) / (k + 1);
  }
  return compose(a, t);
}

inline Jet sin(const Jet& a) {
  std::array<double, kMaxJetOrder + 1> t{};
  const double s = std::sin(a.value()), c = std::cos(a.value());
  const double cycle[4] = {s, c, -s, -c};
  double f = 1;
  for (int k = 0; k <= kMaxJetOrder; ++k) {
    t[k] = cycle[k % 4] / f;
    f *= k + 1;
  }
  return compose(a, t);
}

inline Jet cos(const Jet& a) {
  std::array<double, kMaxJetOrder + 1> t{};
  const double s = std::sin(a.value()), c = std::cos(a.value());
  const double cycle[4] = {c, -s, -c, s};
  double f = 1;
  for (int k = 0; k <= kMaxJetOrder; ++k) {
    t[k] = cycle[k % 4] / f;
    f *= k + 1;
  }
  return compose(a, t);
}

inline Jet pow_int(const Jet& a, int n) {
  if (n < 0) return reciprocal(pow_int(a, -n));
  Jet r = a.order_free() ? Jet(1.0) : Jet::constant(1.0, a.order());
  Jet base = a;
  while (n > 0) {
    if (n & 1) r = r * base;
    n >>= 1;
    if (n) base = base * base;
  }
  return r;
}

inline double value_of(double v) { return v; }
inline double value_of(const Jet& j) { return j.value(); }

/// Evaluates a polynomial with jet coefficients (ascending powers) at t.
inline Jet polyval(std::span<const Jet> coeffs, const Jet& t) {
  Jet r;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) r = r * t + *it;
  return r;
}

inline Jet polyder_val(std::span<const Jet> coeffs, const Jet& t) {
  Jet r;
  for (int k = static_cast<int>(coeffs.size()) - 1; k >= 1; --k)
    r = r * t + coeffs[k] * static_cast<double>(k);
  return r;
}

/// Lifts a simple root r0 of the value-level polynomial to a jet root of the
/// polynomial with jet coefficients (ascending powers).  The value part is
/// first polished in double precision, then Newton's method runs in jet
/// arithmetic.  `tol` is relative to the largest coefficient magnitude.
inline Jet lift_root(std::span<const Jet> coeffs, double r0, double tol = 1e-9) {
  if (coeffs.empty()) throw JetError("empty polynomial");
  int order = Jet::kOrderFree;
  double scale = 0;
  for (const auto& c : coeffs) {
    if (!c.order_free()) {
      if (order != Jet::kOrderFree && order != c.order())
        throw JetError("jet order mismatch in polynomial coefficients");
      order = c.order();
    }
    scale = std::max(scale, std::abs(c.value()));
  }
  std::vector<Jet> values;
  for (const auto& c : coeffs) values.emplace_back(c.value());
  const double rscale = std::max(1.0, std::abs(r0));
  const double deriv0 = polyder_val(values, Jet(r0)).value();
  if (!(std::abs(deriv0) > tol * scale))
    throw JetError("root is not simple at value level");
  if (std::abs(polyval(values, Jet(r0)).value()) >
      std::sqrt(tol) * scale * std::pow(rscale, coeffs.size() - 1))
    throw JetError("initial value is not a root of the value polynomial");

  double r = r0;
  for (int it = 0; it < 4; ++it) {
    const double d = polyder_val(values, Jet(r)).value();
    if (d == 0.0) break;
    r -= polyval(values, Jet(r)).value() / d;
  }
  if (order == Jet::kOrderFree) return Jet(r);
  Jet root = Jet::constant(r, order);
  for (int it = 0; it < Jet::newton_steps(order) + 1; ++it)
    root = root - polyval(coeffs, root) / polyder_val(coeffs, root);
  return root;
}

}  // namespace metrise3d
