#pragma once

// Input documents, reports and the scan/verify drivers behind the
// metrise3d command-line tool.

#include "json.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "metrise3d/expr.hpp"
#include "metrise3d/projective.hpp"
#include "metrise3d/solver.hpp"

namespace metrise3d {

inline constexpr const char* kReportSchema = "metrise3d.report/1";

/// Malformed input files (bad JSON, wrong shape, unparsable expressions).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InputDocument {
  std::array<std::array<std::array<std::string, 3>, 3>, 3> gamma_text;
  std::string epsilon_text = "1";
  std::optional<Point> point;
  std::string name;
  std::string notes;
  ConnectionSpec spec;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Expr parse_field(const std::string& text, const std::string& where) {
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw InputError(where + ": " + e.what());
  }
}

inline Point parse_point_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw InputError(where + " must be [x, y, z]");
  Point p;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw InputError(where + " must contain numbers");
    p[i] = j[i].get<double>();
  }
  return p;
}

}  // namespace detail

/// Parses and validates a connection document; Gamma must be symmetric in
/// its lower indices (checked by evaluation at random points).
inline InputDocument parse_document(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("gamma")) throw InputError("document needs a \"gamma\" key");
  InputDocument doc;
  const auto& g = j["gamma"];
  if (!g.is_array() || g.size() != 3) throw InputError("gamma must be a 3x3x3 array");
  for (int a = 0; a < 3; ++a) {
    if (!g[a].is_array() || g[a].size() != 3) throw InputError("gamma must be a 3x3x3 array");
    for (int b = 0; b < 3; ++b) {
      if (!g[a][b].is_array() || g[a][b].size() != 3)
        throw InputError("gamma must be a 3x3x3 array");
      for (int c = 0; c < 3; ++c) {
        const auto& e = g[a][b][c];
        std::string s;
        if (e.is_string()) s = e.get<std::string>();
        else if (e.is_number()) s = e.dump();
        else throw InputError("gamma entries must be expression strings");
        const std::string where =
            "gamma[" + std::to_string(a) + "][" + std::to_string(b) + "][" + std::to_string(c) + "]";
        doc.gamma_text[a][b][c] = s;
        doc.spec.gamma[a][b][c] = detail::parse_field(s, where);
      }
    }
  }
  if (j.contains("epsilon") && !j["epsilon"].is_null()) {
    if (j["epsilon"].is_string()) doc.epsilon_text = j["epsilon"].get<std::string>();
    else if (j["epsilon"].is_number()) doc.epsilon_text = j["epsilon"].dump();
    else throw InputError("epsilon must be an expression string");
  }
  doc.spec.epsilon = detail::parse_field(doc.epsilon_text, "epsilon");
  if (j.contains("point") && !j["point"].is_null())
    doc.point = detail::parse_point_json(j["point"], "point");
  if (j.contains("name") && j["name"].is_string()) doc.name = j["name"].get<std::string>();
  if (j.contains("notes") && j["notes"].is_string()) doc.notes = j["notes"].get<std::string>();
  try {
    check_symmetric(doc.spec);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return doc;
}

inline InputDocument load_document(const std::string& path) {
  return parse_document(detail::read_file(path));
}

/// A contravariant symmetric tensor given as a 3x3 array of expressions under
/// the key "sigma".
inline Sym2Contra<Expr> load_sigma(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.contains("sigma") || !j["sigma"].is_array() || j["sigma"].size() != 3)
    throw InputError("sigma must be a 3x3 array of expression strings");
  Sym2Contra<Expr> s;
  std::array<std::array<Expr, 3>, 3> full;
  for (int a = 0; a < 3; ++a) {
    if (!j["sigma"][a].is_array() || j["sigma"][a].size() != 3)
      throw InputError("sigma must be a 3x3 array of expression strings");
    for (int b = 0; b < 3; ++b) {
      const auto& e = j["sigma"][a][b];
      const std::string t = e.is_string() ? e.get<std::string>() : e.dump();
      full[a][b] = detail::parse_field(t, "sigma[" + std::to_string(a) + "][" + std::to_string(b) + "]");
    }
  }
  std::mt19937_64 rng(7);
  for (const auto& [a, b] : kSymPairs) {
    for (int k = 0; k < 4; ++k) {
      Point p;
      for (auto& x : p) x = 0.5 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
      double u = 0, v = 0;
      try {
        u = eval(full[a][b], p);
        v = eval(full[b][a], p);
      } catch (const EvalError&) {
        continue;
      }
      if (std::abs(u - v) > 1e-12 * std::max({1.0, std::abs(u), std::abs(v)}))
        throw InputError("sigma is not symmetric");
    }
    s(a, b) = full[a][b];
  }
  return s;
}

/// "x,y,z" -> point.
inline Point parse_point(const std::string& s) {
  Point p;
  std::stringstream ss(s);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) throw InputError("point needs three coordinates: " + s);
    try {
      size_t used = 0;
      p[i] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("bad coordinate '" + item + "' in point " + s);
    }
    ++i;
  }
  if (i != 3) throw InputError("point needs three coordinates: " + s);
  return p;
}

/// Base tolerance: METRISE3D_TOL if set, else the built-in default.
inline double default_tolerance() {
  if (const char* env = std::getenv("METRISE3D_TOL")) {
    char* end = nullptr;
    const double t = std::strtod(env, &end);
    if (end != env && *end == '\0' && t > 0) return t;
    throw InputError(std::string("METRISE3D_TOL is not a positive number: ") + env);
  }
  return kDefaultTol;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricEntry {
  Point point{};
  double h = 1;
  std::array<std::array<double, 3>, 3> g{};
  bool operator==(const MetricEntry&) const = default;
};

struct BranchEntry {
  int branch = 0;
  double root = 0;
  double phi = 0, psi = 0;
  std::string outcome;
  std::string detail;
  double exactness = 0;
  double final_residual = 0;
  int probes = 0;
  bool operator==(const BranchEntry&) const = default;
};

struct Report {
  std::string schema = kReportSchema;
  std::string name;
  Point point{};
  int order = kDefaultOrder;
  double tol = kDefaultTol;
  std::string verdict;
  std::string reason;
  std::string detail;
  std::string mobility;  // "10", ">=1" or empty
  std::string gate;
  double gamma_scale = 0;
  double normalization_residual = 0;
  double v_norm = 0, v_threshold = 0;
  double q_norm = 0, q_threshold = 0;
  double discriminant = 0;
  std::vector<BranchEntry> branches;
  std::vector<std::string> notes;
  int metric_branch = -1;
  std::vector<MetricEntry> metric;
  std::vector<int> signature;  // eigenvalue signs of g at the base point
  std::optional<double> elapsed_ms;

  bool operator==(const Report&) const = default;
};

inline void to_json(nlohmann::json& j, const MetricEntry& m) {
  j = {{"point", m.point}, {"h", m.h}, {"g", m.g}};
}
inline void from_json(const nlohmann::json& j, MetricEntry& m) {
  j.at("point").get_to(m.point);
  j.at("h").get_to(m.h);
  j.at("g").get_to(m.g);
}
inline void to_json(nlohmann::json& j, const BranchEntry& b) {
  j = {{"branch", b.branch},         {"root", b.root},       {"phi", b.phi},
       {"psi", b.psi},               {"outcome", b.outcome}, {"detail", b.detail},
       {"exactness", b.exactness},   {"final_residual", b.final_residual},
       {"probes", b.probes}};
}
inline void from_json(const nlohmann::json& j, BranchEntry& b) {
  j.at("branch").get_to(b.branch);
  j.at("root").get_to(b.root);
  j.at("phi").get_to(b.phi);
  j.at("psi").get_to(b.psi);
  j.at("outcome").get_to(b.outcome);
  j.at("detail").get_to(b.detail);
  j.at("exactness").get_to(b.exactness);
  j.at("final_residual").get_to(b.final_residual);
  j.at("probes").get_to(b.probes);
}

inline void to_json(nlohmann::json& j, const Report& r) {
  j = nlohmann::json{
      {"schema", r.schema},
      {"name", r.name},
      {"point", r.point},
      {"order", r.order},
      {"tol", r.tol},
      {"verdict", r.verdict},
      {"reason", r.reason},
      {"detail", r.detail},
      {"mobility", r.mobility},
      {"diagnostics",
       {{"gate", r.gate},
        {"gamma_scale", r.gamma_scale},
        {"normalization_residual", r.normalization_residual},
        {"v_norm", r.v_norm},
        {"v_threshold", r.v_threshold},
        {"q_norm", r.q_norm},
        {"q_threshold", r.q_threshold},
        {"discriminant", r.discriminant},
        {"branches", r.branches},
        {"notes", r.notes}}},
      {"metric_branch", r.metric_branch},
      {"metric", r.metric},
      {"signature", r.signature},
  };
  if (r.elapsed_ms) j["timings"] = {{"elapsed_ms", *r.elapsed_ms}};
}

inline void from_json(const nlohmann::json& j, Report& r) {
  j.at("schema").get_to(r.schema);
  if (r.schema != kReportSchema) throw InputError("unsupported report schema " + r.schema);
  j.at("name").get_to(r.name);
  j.at("point").get_to(r.point);
  j.at("order").get_to(r.order);
  j.at("tol").get_to(r.tol);
  j.at("verdict").get_to(r.verdict);
  j.at("reason").get_to(r.reason);
  j.at("detail").get_to(r.detail);
  j.at("mobility").get_to(r.mobility);
  const auto& d = j.at("diagnostics");
  d.at("gate").get_to(r.gate);
  d.at("gamma_scale").get_to(r.gamma_scale);
  d.at("normalization_residual").get_to(r.normalization_residual);
  d.at("v_norm").get_to(r.v_norm);
  d.at("v_threshold").get_to(r.v_threshold);
  d.at("q_norm").get_to(r.q_norm);
  d.at("q_threshold").get_to(r.q_threshold);
  d.at("discriminant").get_to(r.discriminant);
  d.at("branches").get_to(r.branches);
  d.at("notes").get_to(r.notes);
  j.at("metric_branch").get_to(r.metric_branch);
  j.at("metric").get_to(r.metric);
  j.at("signature").get_to(r.signature);
  r.elapsed_ms.reset();
  if (j.contains("timings")) r.elapsed_ms = j["timings"].at("elapsed_ms").get<double>();
}

inline std::vector<int> eigen_signs(const Sym2Cov<double>& g) {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) m(i, k) = g(i, k);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m, Eigen::EigenvaluesOnly);
  const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  std::vector<int> s;
  for (int i = 0; i < 3; ++i) {
    const double e = es.eigenvalues()(i);
    s.push_back(std::abs(e) <= 1e-12 * scale ? 0 : (e > 0 ? 1 : -1));
  }
  return s;
}

inline Report make_report(const Verdict& v, const std::string& name = {}) {
  Report r;
  r.name = name;
  const Diagnostics& d = v.trace;
  r.point = d.point;
  r.order = d.order;
  r.tol = d.tol;
  r.verdict = outcome_name(v.outcome);
  r.reason = outcome_reason(v.outcome);
  if (auto* n = std::get_if<NotMetrisable>(&v.outcome)) r.detail = n->detail;
  if (auto* n = std::get_if<Indeterminate>(&v.outcome)) r.detail = n->detail;
  if (std::holds_alternative<ProjectivelyFlat>(v.outcome)) r.mobility = "10";
  r.gate = to_string(d.gate);
  r.gamma_scale = d.gamma_scale;
  r.normalization_residual = d.normalization_residual;
  r.v_norm = d.v_norm;
  r.v_threshold = d.v_threshold;
  r.q_norm = d.q_norm;
  r.q_threshold = d.q_threshold;
  r.discriminant = d.discriminant;
  for (const auto& b : d.branches)
    r.branches.push_back({b.branch, b.root, b.phi, b.psi, b.outcome, b.detail, b.max_exactness,
                          b.max_final_relative, b.probes_used});
  r.notes = d.notes;
  if (auto* m = std::get_if<Metrisable>(&v.outcome)) {
    r.mobility = ">=1";
    r.metric_branch = m->solution.branch;
    for (const auto& s : m->metric) {
      MetricEntry e;
      e.point = s.point;
      e.h = s.h;
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) e.g[i][k] = s.g(i, k);
      r.metric.push_back(e);
    }
    r.signature = eigen_signs(m->solution.metric_at_base);
  }
  return r;
}

inline std::string render_text(const Report& r) {
  std::ostringstream o;
  o.precision(10);
  auto pt = [&](const Point& p) { o << "(" << p[0] << ", " << p[1] << ", " << p[2] << ")"; };
  if (!r.name.empty()) o << "connection: " << r.name << "\n";
  o << "point: ";
  pt(r.point);
  o << "  order: " << r.order << "  tol: " << r.tol << "\n";
  o << "verdict: " << r.verdict;
  if (!r.reason.empty()) o << " (" << r.reason << ")";
  o << "\n";
  if (!r.detail.empty()) o << "detail: " << r.detail << "\n";
  if (!r.mobility.empty()) o << "degree of mobility: " << r.mobility << "\n";
  o << "gate: " << r.gate << "\n";
  o << "|V| = " << r.v_norm << " (threshold " << r.v_threshold << ")\n";
  o << "|Q| = " << r.q_norm << " (threshold " << r.q_threshold << ")\n";
  o << "discriminant = " << r.discriminant << "\n";
  for (const auto& b : r.branches)
    o << "branch " << b.branch << ": root " << b.root << "  phi " << b.phi << "  psi " << b.psi
      << "  |d omega| " << b.exactness << "  residual " << b.final_residual << "  -> "
      << b.outcome << (b.detail.empty() ? "" : " [" + b.detail + "]") << "\n";
  for (const auto& n : r.notes) o << "note: " << n << "\n";
  for (const auto& m : r.metric) {
    o << "metric at ";
    pt(m.point);
    o << "  h = " << m.h << "  (overall constant undetermined, h = 1 at the base point)\n";
    for (const auto& row : m.g) o << "  [" << row[0] << ", " << row[1] << ", " << row[2] << "]\n";
  }
  if (!r.signature.empty())
    o << "eigenvalue signs at base point: " << r.signature[0] << " " << r.signature[1] << " "
      << r.signature[2] << "\n";
  if (r.elapsed_ms) o << "elapsed: " << *r.elapsed_ms << " ms\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Scan

struct ScanAxis {
  double min = 0, max = 0;
  int n = 1;

  double at(int i) const { return n == 1 ? min : min + (max - min) * i / (n - 1); }
};

/// "xmin:xmax:n,ymin:ymax:n,zmin:zmax:n"
inline std::array<ScanAxis, 3> parse_box(const std::string& s) {
  std::array<ScanAxis, 3> box;
  std::stringstream ss(s);
  std::string axis;
  int i = 0;
  while (std::getline(ss, axis, ',')) {
    if (i >= 3) throw InputError("box needs three axes: " + s);
    std::stringstream as(axis);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(as, part, ':')) parts.push_back(part);
    if (parts.size() != 3) throw InputError("axis must be min:max:n, got " + axis);
    try {
      box[i].min = std::stod(parts[0]);
      box[i].max = std::stod(parts[1]);
      box[i].n = std::stoi(parts[2]);
    } catch (const std::exception&) {
      throw InputError("bad axis " + axis);
    }
    if (box[i].n < 1) throw InputError("axis needs n >= 1: " + axis);
    ++i;
  }
  if (i != 3) throw InputError("box needs three axes: " + s);
  return box;
}

struct ScanRow {
  Point point{};
  std::string verdict;  // outcome, optionally ":reason"; "DomainError" when evaluation fails
  double q_norm = 0;
  double discriminant = 0;
  double phi = 0, psi = 0;
  double residual = 0;
};

/// The branch whose numbers a scan row reports: the winning one when
/// Metrisable, else the first.
inline const BranchReport* reported_branch(const Verdict& v) {
  const auto& b = v.trace.branches;
  if (b.empty()) return nullptr;
  if (std::holds_alternative<Metrisable>(v.outcome)) return &b.back();
  return &b.front();
}

inline ScanRow scan_row_from(const Verdict& v) {
  ScanRow row;
  row.point = v.trace.point;
  row.verdict = outcome_name(v.outcome);
  const std::string reason = outcome_reason(v.outcome);
  if (!reason.empty()) row.verdict += ":" + reason;
  row.q_norm = v.trace.q_norm;
  row.discriminant = v.trace.discriminant;
  if (const BranchReport* b = reported_branch(v)) {
    row.phi = b->phi;
    row.psi = b->psi;
    row.residual = b->max_final_relative;
  }
  return row;
}

inline ScanRow scan_point(const ConnectionSpec& spec, const Point& p, const SolverOptions& opt) {
  try {
    return scan_row_from(decide(spec, p, opt));
  } catch (const EvalError&) {
    ScanRow row;
    row.point = p;
    row.verdict = "DomainError";
    return row;
  }
}

/// Rows in lexicographic grid order (x slowest), computed on `threads` workers.
inline std::vector<ScanRow> scan(const ConnectionSpec& spec, const std::array<ScanAxis, 3>& box,
                                 const SolverOptions& opt, unsigned threads = 0) {
  std::vector<Point> pts;
  for (int i = 0; i < box[0].n; ++i)
    for (int j = 0; j < box[1].n; ++j)
      for (int k = 0; k < box[2].n; ++k) pts.push_back({box[0].at(i), box[1].at(j), box[2].at(k)});
  std::vector<ScanRow> rows(pts.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(pts.size()));
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < pts.size();) rows[i] = scan_point(spec, pts[i], opt);
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  return rows;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string scan_csv(const std::vector<ScanRow>& rows) {
  std::string out = "x,y,z,verdict,|Q|,discriminant,phi,psi,residual\n";
  for (const auto& r : rows) {
    out += format_double(r.point[0]) + "," + format_double(r.point[1]) + "," +
           format_double(r.point[2]) + "," + r.verdict;
    if (r.verdict == "DomainError") {
      out += ",,,,,\n";
      continue;
    }
    out += "," + format_double(r.q_norm) + "," + format_double(r.discriminant) + "," +
           format_double(r.phi) + "," + format_double(r.psi) + "," + format_double(r.residual) +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verify

enum class VerifyStatus { Pass, Fail, Rejected };

inline const char* to_string(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::Pass: return "PASS";
    case VerifyStatus::Fail: return "FAIL";
    case VerifyStatus::Rejected: return "REJECTED";
  }
  return "?";
}

struct VerifyResult {
  VerifyStatus status = VerifyStatus::Pass;
  ResidualReport residuals;
  int skipped = 0;
  std::string message;
};

/// Deterministic sample points in the cube of half-width 0.25 around center.
inline std::vector<Point> sample_points(const Point& center, int n, double half_width = 0.25) {
  std::mt19937_64 rng(0x7665726966795ULL);
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) {
    Point p;
    for (int k = 0; k < 3; ++k)
      p[k] = center[k] + half_width * (2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0);
    pts.push_back(p);
  }
  return pts;
}

/// Residual of the metrisability equation for a user-supplied sigma at n
/// sampled regular points.  PASS iff the max relative residual is below tol.
inline VerifyResult verify_sigma(const ConnectionSpec& spec, const Sym2Contra<Expr>& sigma,
                                 const Point& center, int n, double tol) {
  VerifyResult out;
  bool nondegenerate = false;
  std::vector<Point> regular;
  for (const Point& p : sample_points(center, n)) {
    try {
      if (eval(spec.epsilon, p) == 0.0) throw EvalError("epsilon vanishes", "");
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          for (int c = 0; c < 3; ++c) (void)eval(spec.gamma[a][b][c], p);
      Sym2Contra<double> sv;
      for (int k = 0; k < 6; ++k) sv.c[k] = eval(sigma.c[k], p);
      const double f = std::sqrt(frobenius2_value(sv));
      if (f > 0 && std::abs(det(sv)) > 1e-12 * f * f * f) nondegenerate = true;
      regular.push_back(p);
    } catch (const EvalError&) {
      ++out.skipped;
    }
  }
  if (!regular.empty() && !nondegenerate) {
    out.status = VerifyStatus::Rejected;
    out.message = "sigma is degenerate at every sample point; the residual says nothing";
    return out;
  }
  if (regular.empty()) throw EvalError("no regular sample point", "");
  out.residuals = verify_metrisability_equation(spec, sigma, regular);
  out.status = out.residuals.max_relative < tol ? VerifyStatus::Pass : VerifyStatus::Fail;
  return out;
}

}  // namespace metrise3d
