// metrise3d {analyze|verify|scan} <file> [options]
//
// Exit codes: 0 analysis completed (whatever the verdict), 1 parse or I/O
// failure, 2 the expressions cannot be evaluated at the requested point.

#include <chrono>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "metrise3d.hpp"

using namespace metrise3d;

namespace {

struct Common {
  std::string file;
  std::string point;
  int order = kDefaultOrder;
  std::optional<double> tol;
};

Point base_point(const Common& c, const InputDocument& doc) {
  if (!c.point.empty()) return parse_point(c.point);
  if (doc.point) return *doc.point;
  throw InputError("no point given: pass --point or add \"point\" to the document");
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("cannot write " + path);
}

int run_analyze(const Common& c, const std::vector<std::string>& metric_points,
                const std::string& json_path, bool timings) {
  const InputDocument doc = load_document(c.file);
  SolverOptions opt;
  opt.order = c.order;
  opt.tol = c.tol.value_or(default_tolerance());
  for (const auto& s : metric_points) opt.metric_points.push_back(parse_point(s));
  const Point p = base_point(c, doc);
  const auto t0 = std::chrono::steady_clock::now();
  const Verdict v = decide(doc.spec, p, opt);
  Report r = make_report(v, doc.name);
  if (timings)
    r.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::cout << render_text(r);
  if (!json_path.empty()) write_file(json_path, nlohmann::json(r).dump(2) + "\n");
  return 0;
}

int run_verify(const Common& c, const std::string& sigma_path, int points) {
  const InputDocument doc = load_document(c.file);
  const Sym2Contra<Expr> sigma = load_sigma(sigma_path);
  const Point p = base_point(c, doc);
  const double tol = c.tol.value_or(kFinalResidualTol);
  const VerifyResult res = verify_sigma(doc.spec, sigma, p, points, tol);
  if (res.status == VerifyStatus::Rejected) {
    std::cerr << "warning: " << res.message << "\n";
    std::cout << "verify: " << to_string(res.status) << "\n";
    return 0;
  }
  std::cout.precision(6);
  std::cout << "points: " << res.residuals.points.size() << " (skipped " << res.skipped << ")\n";
  std::cout << "max absolute residual: " << res.residuals.max_absolute << "\n";
  std::cout << "max relative residual: " << res.residuals.max_relative << " (tol " << tol << ")\n";
  std::cout << "verify: " << to_string(res.status) << "\n";
  return 0;
}

int run_scan(const Common& c, const std::string& box_spec, const std::string& out_path,
             unsigned threads) {
  const InputDocument doc = load_document(c.file);
  SolverOptions opt;
  opt.order = c.order;
  opt.tol = c.tol.value_or(default_tolerance());
  const auto box = parse_box(box_spec);
  const std::string csv = scan_csv(scan(doc.spec, box, opt, threads));
  if (out_path.empty()) std::cout << csv;
  else write_file(out_path, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local metrisability of torsion-free connections in dimension three"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("file", common.file, "connection document (JSON)")->required();
    sub->add_option("--point", common.point, "base point x,y,z");
    sub->add_option("--order", common.order, "jet order")->check(CLI::Range(1, kMaxJetOrder));
    sub->add_option("--tol", common.tol, "base tolerance (default 1e-9, or METRISE3D_TOL)")
        ->check(CLI::PositiveNumber);
  };

  auto* analyze = app.add_subcommand("analyze", "decide metrisability near a point");
  add_common(analyze);
  std::vector<std::string> metric_points;
  std::string json_path;
  bool timings = false;
  analyze->add_option("--metric-point", metric_points, "extra point x,y,z for metric output");
  analyze->add_option("--json", json_path, "write the report as JSON");
  analyze->add_flag("--timings", timings, "include wall-clock time in the report");

  auto* verify = app.add_subcommand("verify", "check a candidate solution sigma^{bc}");
  add_common(verify);
  std::string sigma_path;
  int points = 20;
  verify->add_option("--sigma", sigma_path, "JSON with a 3x3 \"sigma\" array")->required();
  verify->add_option("--points", points, "number of sample points")->check(CLI::PositiveNumber);

  auto* scan_cmd = app.add_subcommand("scan", "run the decision over a grid");
  add_common(scan_cmd);
  std::string box, out_path;
  unsigned threads = 0;
  scan_cmd->add_option("--box", box, "xmin:xmax:n,ymin:ymax:n,zmin:zmax:n")->required();
  scan_cmd->add_option("--out", out_path, "CSV output path (default stdout)");
  scan_cmd->add_option("--threads", threads, "worker threads (default: hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*analyze) return run_analyze(common, metric_points, json_path, timings);
    if (*verify) return run_verify(common, sigma_path, points);
    if (*scan_cmd) return run_scan(common, box, out_path, threads);
  } catch (const EvalError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
