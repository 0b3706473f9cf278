#pragma once

// Closed-form scalar expressions in the coordinates x, y, z.
//
// Grammar (whitespace is insignificant):
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := ('-')? power
//   power  := atom ('^' integer)?
//   atom   := number | 'x' | 'y' | 'z' | func '(' expr ')' | '(' expr ')'
//   func   := 'sin' | 'cos' | 'exp' | 'log' | 'sqrt'
//   integer:= ('-')? digits
//
// Expressions are immutable DAGs.  Derivatives are built with folding
// constructors (0*a -> 0, 1*a -> a, ...) and memoized per node and variable,
// so repeated partials share structure.

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "metrise3d/jet.hpp"

namespace metrise3d {

enum class Op { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Log, Sqrt };

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string message, std::size_t offset,
             std::vector<std::string> expected)
      : std::runtime_error(format(message, offset, expected)),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const { return offset_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  static std::string format(const std::string& message, std::size_t offset,
                            const std::vector<std::string>& expected) {
    std::string s = message + " at byte " + std::to_string(offset);
    if (!expected.empty()) {
      s += " (expected ";
      for (std::size_t i = 0; i < expected.size(); ++i)
        s += (i ? ", " : "") + expected[i];
      s += ")";
    }
    return s;
  }

  std::size_t offset_;
  std::vector<std::string> expected_;
};

/// Raised when an expression is evaluated outside its domain.
class EvalError : public std::runtime_error {
 public:
  EvalError(const std::string& what, std::string subexpr)
      : std::runtime_error(what + " in '" + subexpr + "'"),
        subexpr_(std::move(subexpr)) {}
  const std::string& subexpression() const { return subexpr_; }

 private:
  std::string subexpr_;
};

class Expr;

namespace detail {

struct Node {
  Op op = Op::Const;
  double value = 0;  // Const
  int var = 0;       // Var
  int exponent = 0;  // Pow
  std::shared_ptr<const Node> a, b;

  mutable std::mutex mu;
  mutable std::array<std::shared_ptr<const Node>, 3> d;
};

using NodePtr = std::shared_ptr<const Node>;

}  // namespace detail

class Expr {
 public:
  Expr() : Expr(constant(0.0)) {}

  static Expr constant(double v) {
    auto n = std::make_shared<detail::Node>();
    n->op = Op::Const;
    n->value = v;
    return Expr(std::move(n));
  }
  static Expr variable(int var) {
    if (var < 0 || var > 2) throw std::invalid_argument("variable index");
    auto n = std::make_shared<detail::Node>();
    n->op = Op::Var;
    n->var = var;
    return Expr(std::move(n));
  }

  Op op() const { return n_->op; }
  bool is_constant() const { return n_->op == Op::Const; }
  bool is_constant(double v) const { return is_constant() && n_->value == v; }
  double constant_value() const { return n_->value; }
  int variable_index() const { return n_->var; }
  int exponent() const { return n_->exponent; }
  Expr lhs() const { return Expr(n_->a); }
  Expr rhs() const { return Expr(n_->b); }
  const detail::Node* node() const { return n_.get(); }

  friend Expr operator-(const Expr& a) {
    if (a.is_constant()) return constant(-a.constant_value());
    if (a.op() == Op::Neg) return a.lhs();
    return make(Op::Neg, a.n_);
  }
  friend Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
      return constant(a.constant_value() + b.constant_value());
    if (a.is_constant(0.0)) return b;
    if (b.is_constant(0.0)) return a;
    return make(Op::Add, a.n_, b.n_);
  }
  friend Expr operator-(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
      return constant(a.constant_value() - b.constant_value());
    if (b.is_constant(0.0)) return a;
    if (a.is_constant(0.0)) return -b;
    return make(Op::Sub, a.n_, b.n_);
  }
  friend Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
      return constant(a.constant_value() * b.constant_value());
    if (a.is_constant(0.0) || b.is_constant(0.0)) return constant(0.0);
    if (a.is_constant(1.0)) return b;
    if (b.is_constant(1.0)) return a;
    if (a.is_constant(-1.0)) return -b;
    if (b.is_constant(-1.0)) return -a;
    return make(Op::Mul, a.n_, b.n_);
  }
  friend Expr operator/(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant() && b.constant_value() != 0.0)
      return constant(a.constant_value() / b.constant_value());
    if (b.is_constant(1.0)) return a;
    if (a.is_constant(0.0) && !b.is_constant()) return constant(0.0);
    return make(Op::Div, a.n_, b.n_);
  }
  friend Expr pow(const Expr& a, int n) {
    if (n == 0) return constant(1.0);
    if (n == 1) return a;
    if (a.is_constant() && (n > 0 || a.constant_value() != 0.0))
      return constant(std::pow(a.constant_value(), n));
    return make(Op::Pow, a.n_, nullptr, n);
  }
  friend Expr sin(const Expr& a) { return unary(Op::Sin, a); }
  friend Expr cos(const Expr& a) { return unary(Op::Cos, a); }
  friend Expr exp(const Expr& a) { return unary(Op::Exp, a); }
  friend Expr log(const Expr& a) { return unary(Op::Log, a); }
  friend Expr sqrt(const Expr& a) { return unary(Op::Sqrt, a); }

  static Expr unary(Op op, const Expr& a) {
    if (a.is_constant()) {
      const double v = a.constant_value();
      switch (op) {
        case Op::Sin: return constant(std::sin(v));
        case Op::Cos: return constant(std::cos(v));
        case Op::Exp: return constant(std::exp(v));
        case Op::Log: if (v > 0) return constant(std::log(v)); break;
        case Op::Sqrt: if (v >= 0) return constant(std::sqrt(v)); break;
        default: break;
      }
    }
    return make(op, a.n_);
  }

 private:
  explicit Expr(detail::NodePtr n) : n_(std::move(n)) {}

  static Expr make(Op op, detail::NodePtr a, detail::NodePtr b = nullptr,
                   int exponent = 0) {
    auto n = std::make_shared<detail::Node>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    n->exponent = exponent;
    return Expr(std::move(n));
  }

  friend Expr differentiate(const Expr& e, int var);
  friend struct ExprAccess;

  detail::NodePtr n_;
};

struct ExprAccess {
  static Expr wrap(detail::NodePtr n) { return Expr(std::move(n)); }
  static const detail::NodePtr& ptr(const Expr& e) { return e.n_; }
};

// ---------------------------------------------------------------------------
// Differentiation

/// Exact symbolic partial derivative with respect to x (0), y (1) or z (2).
inline Expr differentiate(const Expr& e, int var) {
  const detail::Node& n = *e.n_;
  {
    std::lock_guard<std::mutex> lock(n.mu);
    if (n.d[var]) return Expr(n.d[var]);
  }
  Expr r;
  switch (n.op) {
    case Op::Const: r = Expr::constant(0.0); break;
    case Op::Var: r = Expr::constant(n.var == var ? 1.0 : 0.0); break;
    case Op::Neg: r = -differentiate(e.lhs(), var); break;
    case Op::Add:
      r = differentiate(e.lhs(), var) + differentiate(e.rhs(), var);
      break;
    case Op::Sub:
      r = differentiate(e.lhs(), var) - differentiate(e.rhs(), var);
      break;
    case Op::Mul:
      r = differentiate(e.lhs(), var) * e.rhs() +
          e.lhs() * differentiate(e.rhs(), var);
      break;
    case Op::Div: {
      const Expr u = e.lhs(), v = e.rhs();
      const Expr du = differentiate(u, var), dv = differentiate(v, var);
      if (dv.is_constant(0.0))
        r = du / v;
      else
        r = (du * v - u * dv) / pow(v, 2);
      break;
    }
    case Op::Pow:
      r = Expr::constant(n.exponent) * pow(e.lhs(), n.exponent - 1) *
          differentiate(e.lhs(), var);
      break;
    case Op::Sin: r = cos(e.lhs()) * differentiate(e.lhs(), var); break;
    case Op::Cos: r = -(sin(e.lhs()) * differentiate(e.lhs(), var)); break;
    case Op::Exp: r = exp(e.lhs()) * differentiate(e.lhs(), var); break;
    case Op::Log: r = differentiate(e.lhs(), var) / e.lhs(); break;
    case Op::Sqrt:
      r = differentiate(e.lhs(), var) / (Expr::constant(2.0) * sqrt(e.lhs()));
      break;
  }
  std::lock_guard<std::mutex> lock(n.mu);
  if (!n.d[var]) n.d[var] = ExprAccess::ptr(r);
  return Expr(n.d[var]);
}

/// d^alpha e, differentiating in x, then y, then z.
inline Expr partial(const Expr& e, const MultiIndex& alpha) {
  Expr r = e;
  for (int v = 0; v < 3; ++v)
    for (int k = 0; k < alpha[v]; ++k) r = differentiate(r, v);
  return r;
}

// ---------------------------------------------------------------------------
// Printing

namespace detail {

inline int precedence(Op op) {
  switch (op) {
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    default: return 5;
  }
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // shortest representation that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    char tmp[32];
    std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

inline void print(const Expr& e, int min_prec, std::string& out) {
  const Op op = e.op();
  int prec = precedence(op);
  if (op == Op::Const && e.constant_value() < 0) prec = 3;
  const bool paren = prec < min_prec;
  if (paren) out += '(';
  switch (op) {
    case Op::Const:
      if (e.constant_value() < 0) {
        out += '-';
        out += format_number(-e.constant_value());
      } else {
        out += format_number(e.constant_value());
      }
      break;
    case Op::Var: out += "xyz"[e.variable_index()]; break;
    case Op::Neg:
      out += '-';
      print(e.lhs(), 4, out);
      break;
    case Op::Add:
    case Op::Sub:
      print(e.lhs(), 1, out);
      out += op == Op::Add ? " + " : " - ";
      print(e.rhs(), 2, out);
      break;
    case Op::Mul:
    case Op::Div:
      print(e.lhs(), 2, out);
      out += op == Op::Mul ? "*" : "/";
      print(e.rhs(), 3, out);
      break;
    case Op::Pow:
      print(e.lhs(), 5, out);
      out += '^';
      out += std::to_string(e.exponent());
      break;
    default: {
      static const char* names[] = {"sin", "cos", "exp", "log", "sqrt"};
      out += names[static_cast<int>(op) - static_cast<int>(Op::Sin)];
      out += '(';
      print(e.lhs(), 0, out);
      out += ')';
    }
  }
  if (paren) out += ')';
}

}  // namespace detail

/// Canonical text form; parse(to_string(e)) evaluates identically to e.
inline std::string to_string(const Expr& e) {
  std::string s;
  detail::print(e, 0, s);
  return s;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  Expr parse() {
    Expr e = expr();
    skip_ws();
    if (pos_ != src_.size())
      throw ParseError("unexpected '" + std::string(1, src_[pos_]) + "'", pos_,
                       {"'+'", "'-'", "'*'", "'/'", "'^'", "end of input"});
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr expr() {
    Expr e = term();
    for (;;) {
      if (accept('+'))
        e = e + term();
      else if (accept('-'))
        e = e - term();
      else
        return e;
    }
  }

  Expr term() {
    Expr e = factor();
    for (;;) {
      skip_ws();
      if (pos_ + 1 < src_.size() && src_[pos_] == '*' && src_[pos_ + 1] == '*')
        throw ParseError("'**' is not an operator", pos_, {"'*'", "'^'"});
      if (accept('*'))
        e = e * factor();
      else if (accept('/'))
        e = e / factor();
      else
        return e;
    }
  }

  Expr factor() {
    if (accept('-')) return -power();
    return power();
  }

  Expr power() {
    Expr base = atom();
    if (!accept('^')) return base;
    skip_ws();
    const std::size_t start = pos_;
    bool negative = false;
    if (pos_ < src_.size() && src_[pos_] == '-') {
      negative = true;
      ++pos_;
    }
    const std::size_t digits = pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
    if (pos_ == digits || (pos_ < src_.size() && (src_[pos_] == '.' || src_[pos_] == 'e')))
      throw ParseError("exponent must be an integer literal", start, {"integer"});
    int n = std::stoi(std::string(src_.substr(digits, pos_ - digits)));
    return pow(base, negative ? -n : n);
  }

  Expr atom() {
    skip_ws();
    if (pos_ >= src_.size())
      throw ParseError("unexpected end of input", pos_,
                       {"number", "variable", "function", "'('"});
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      if (!accept(')')) throw ParseError("unbalanced parenthesis", pos_, {"')'"});
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_])))
        ++pos_;
      const std::string_view id = src_.substr(start, pos_ - start);
      if (id == "x") return Expr::variable(0);
      if (id == "y") return Expr::variable(1);
      if (id == "z") return Expr::variable(2);
      static const std::pair<std::string_view, Op> funcs[] = {
          {"sin", Op::Sin}, {"cos", Op::Cos}, {"exp", Op::Exp},
          {"log", Op::Log}, {"sqrt", Op::Sqrt}};
      for (const auto& [name, op] : funcs) {
        if (id != name) continue;
        if (!accept('(')) throw ParseError("expected '(' after function", pos_, {"'('"});
        Expr arg = expr();
        if (!accept(')')) throw ParseError("unbalanced parenthesis", pos_, {"')'"});
        return Expr::unary(op, arg);
      }
      throw ParseError("unknown identifier '" + std::string(id) + "'", start,
                       {"x", "y", "z", "sin", "cos", "exp", "log", "sqrt"});
    }
    throw ParseError("unexpected '" + std::string(1, c) + "'", pos_,
                     {"number", "variable", "function", "'('"});
  }

  Expr number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t n = digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      n += digits();
    }
    if (n == 0) throw ParseError("malformed number", start, {"digit"});
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      const std::size_t mark = pos_;
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (digits() == 0) throw ParseError("malformed exponent", mark, {"digit"});
    }
    return Expr::constant(std::strtod(std::string(src_.substr(start, pos_ - start)).c_str(), nullptr));
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Expr parse(std::string_view source) { return detail::Parser(source).parse(); }

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

template <class Scalar>
class Evaluator {
 public:
  using Leaf = Scalar (*)(int var, const Point& p, int order);

  Evaluator(const Point& p, int order, Leaf leaf) : p_(p), order_(order), leaf_(leaf) {}

  Scalar operator()(const Expr& e) {
    const Node* key = e.node();
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    Scalar v = compute(e);
    memo_.emplace(key, v);
    return v;
  }

 private:
  [[noreturn]] static void fail(const char* what, const Expr& e) {
    throw EvalError(what, to_string(e));
  }

  Scalar compute(const Expr& e) {
    using std::cos, std::exp, std::log, std::sin, std::sqrt;
    switch (e.op()) {
      case Op::Const: return Scalar(e.constant_value());
      case Op::Var: return leaf_(e.variable_index(), p_, order_);
      case Op::Neg: return -(*this)(e.lhs());
      case Op::Add: return (*this)(e.lhs()) + (*this)(e.rhs());
      case Op::Sub: return (*this)(e.lhs()) - (*this)(e.rhs());
      case Op::Mul: return (*this)(e.lhs()) * (*this)(e.rhs());
      case Op::Div: {
        Scalar den = (*this)(e.rhs());
        if (value_of(den) == 0.0) fail("division by zero", e);
        return (*this)(e.lhs()) / den;
      }
      case Op::Pow: {
        Scalar base = (*this)(e.lhs());
        if (e.exponent() < 0 && value_of(base) == 0.0) fail("division by zero", e);
        return int_power(base, e.exponent());
      }
      case Op::Sin: return sin((*this)(e.lhs()));
      case Op::Cos: return cos((*this)(e.lhs()));
      case Op::Exp: return exp((*this)(e.lhs()));
      case Op::Log: {
        Scalar a = (*this)(e.lhs());
        if (!(value_of(a) > 0.0)) fail("log of nonpositive value", e);
        return log(a);
      }
      case Op::Sqrt: {
        Scalar a = (*this)(e.lhs());
        if (value_of(a) < 0.0) fail("sqrt of negative value", e);
        if constexpr (std::is_same_v<Scalar, Jet>)
          if (value_of(a) == 0.0 && order_ > 0) fail("sqrt not differentiable at zero", e);
        return sqrt(a);
      }
    }
    fail("unknown node", e);
  }

  static Scalar int_power(const Scalar& b, int n) {
    if constexpr (std::is_same_v<Scalar, Jet>)
      return pow_int(b, n);
    else
      return std::pow(b, n);
  }

  Point p_;
  int order_;
  Leaf leaf_;
  std::unordered_map<const Node*, Scalar> memo_;
};

inline double leaf_value(int var, const Point& p, int) { return p[var]; }
inline Jet leaf_jet(int var, const Point& p, int order) {
  return Jet::variable(var, p[var], order);
}

}  // namespace detail

inline double eval(const Expr& e, const Point& p) {
  detail::Evaluator<double> ev(p, 0, &detail::leaf_value);
  const double v = ev(e);
  if (!std::isfinite(v)) throw EvalError("non-finite value", to_string(e));
  return v;
}

/// Degree-K Taylor jet of e at p from its symbolic partials:
/// coefficient of alpha is d^alpha e(p) / alpha!.
inline Jet jet_of(const Expr& e, const Point& p, int order) {
  Jet j = Jet::constant(0.0, order);
  detail::Evaluator<double> ev(p, 0, &detail::leaf_value);
  const auto& tables = detail::jet_tables();
  for (int i = 0; i < jet_size(order); ++i) {
    const double v = ev(partial(e, tables.index[i]));
    if (!std::isfinite(v)) throw EvalError("non-finite value", to_string(e));
    j[i] = v / tables.factorial[i];
  }
  return j;
}

/// Degree-K jet of e at p by evaluating e directly in jet arithmetic.
inline Jet eval_jet(const Expr& e, const Point& p, int order) {
  detail::Evaluator<Jet> ev(p, order, &detail::leaf_jet);
  Jet j = ev(e);
  if (j.order_free()) j = Jet::constant(j.value(), order);
  return j;
}

}  // namespace metrise3d
