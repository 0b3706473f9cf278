#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "metrise3d/cli.hpp"
#include "oracles.hpp"

using namespace metrise3d;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(METRISE3D_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / ("metrise3d_test_" + std::to_string(::getpid()) + "_" + name);
  std::ofstream(p) << content;
  return p;
}

std::string read(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

const std::string kFlatGamma = R"([[["0","0","0"],["0","0","0"],["0","0","0"]],
  [["0","0","0"],["0","0","0"],["0","0","0"]],[["0","0","0"],["0","0","0"],["0","0","0"]]])";

}  // namespace

TEST(Document, LoadsFixture) {
  const InputDocument d = load_document(oracle::data("example.json"));
  ASSERT_TRUE(d.point.has_value());
  EXPECT_EQ(*d.point, (Point{1, 1, 1}));
  EXPECT_EQ(d.name, "metrisable example connection");
  EXPECT_DOUBLE_EQ(eval(d.spec.epsilon, {1, 1, 1}), 32.0);
}

TEST(Document, DefaultsEpsilonToOne) {
  const InputDocument d = parse_document(R"({"gamma": )" + kFlatGamma + "}");
  EXPECT_EQ(d.epsilon_text, "1");
  EXPECT_FALSE(d.point.has_value());
}

TEST(Document, Errors) {
  EXPECT_THROW(parse_document("{"), InputError);
  EXPECT_THROW(parse_document(R"({"name": "x"})"), InputError);
  EXPECT_THROW(parse_document(R"({"gamma": [[["0"]]]})"), InputError);
  EXPECT_THROW(parse_document(R"({"gamma": )" + kFlatGamma + R"(, "point": [1, 2]})"), InputError);
  EXPECT_THROW(parse_document(R"({"gamma": )" + kFlatGamma + R"(, "epsilon": "x**2"})"), InputError);
  std::string asym = kFlatGamma;
  asym.replace(asym.find("\"0\""), 3, "\"x\"");  // Gamma_{11}^1 only: still symmetric
  EXPECT_NO_THROW(parse_document(R"({"gamma": )" + asym + "}"));
  std::string bad = R"([[["0","0","0"],["y","0","0"],["0","0","0"]],
    [["0","0","0"],["0","0","0"],["0","0","0"]],[["0","0","0"],["0","0","0"],["0","0","0"]]])";
  try {
    parse_document(R"({"gamma": )" + bad + "}");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("symmetric"), std::string::npos);
  }
  try {
    parse_document(R"({"gamma": [[["0","0","0"],["0","sin x","0"],["0","0","0"]],
      [["0","0","0"],["0","0","0"],["0","0","0"]],[["0","0","0"],["0","0","0"],["0","0","0"]]]})");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma[0][1][1]"), std::string::npos);
  }
}

TEST(Document, PointAndBoxParsing) {
  EXPECT_EQ(parse_point("1,2.5,-3"), (Point{1, 2.5, -3}));
  EXPECT_THROW(parse_point("1,2"), InputError);
  EXPECT_THROW(parse_point("1,2,3,4"), InputError);
  EXPECT_THROW(parse_point("1,a,3"), InputError);
  const auto box = parse_box("0.5:1.5:5,0:1:1,2:3:2");
  EXPECT_EQ(box[0].n, 5);
  EXPECT_DOUBLE_EQ(box[0].at(4), 1.5);
  EXPECT_DOUBLE_EQ(box[1].at(0), 0.0);
  EXPECT_THROW(parse_box("0:1:2,0:1:2"), InputError);
  EXPECT_THROW(parse_box("0:1:0,0:1:2,0:1:2"), InputError);
}

TEST(Document, SigmaFiles) {
  const auto s = load_sigma(oracle::data("example_sigma.json"));
  EXPECT_DOUBLE_EQ(eval(s(1, 1), {1, 1, 1}), 0.25);
  const auto bad = temp_file("asym_sigma.json", R"({"sigma": [["1","x","0"],["0","1","0"],["0","0","1"]]})");
  EXPECT_THROW(load_sigma(bad.string()), InputError);
  fs::remove(bad);
}

TEST(Report, RoundTrip) {
  SolverOptions opt;
  opt.metric_points = {{1.2, 0.8, 1.1}};
  for (const auto& v : {decide(oracle::fixture(), {1, 1, 1}, opt),
                        decide(load_document(oracle::data("flat.json")).spec, {1, 1, 1}),
                        decide(oracle::fixture(), {1, 1, 1.2})}) {
    Report r = make_report(v, "name");
    r.elapsed_ms = 12.5;
    const Report back = nlohmann::json::parse(nlohmann::json(r).dump()).get<Report>();
    EXPECT_EQ(back, r);
  }
}

TEST(Report, ContentsForFixture) {
  const Report r = make_report(decide(oracle::fixture(), {1, 1, 1}), "fixture");
  EXPECT_EQ(r.schema, "metrise3d.report/1");
  EXPECT_EQ(r.verdict, "Metrisable");
  EXPECT_EQ(r.mobility, ">=1");
  ASSERT_EQ(r.metric.size(), 1u);
  EXPECT_NEAR(r.metric[0].g[0][0] / r.metric[0].g[1][1], 4.0, 1e-9);
  EXPECT_EQ(r.signature.size(), 3u);
  const std::string text = render_text(r);
  EXPECT_NE(text.find("verdict: Metrisable"), std::string::npos);
  EXPECT_EQ(nlohmann::json(r).contains("timings"), false);
}

TEST(Scan, SinglePointMatchesAnalyze) {
  const ConnectionSpec spec = oracle::fixture();
  SolverOptions opt;
  const auto rows = scan(spec, parse_box("1.1:9:1,0.9:9:1,1.2:9:1"), opt, 1);
  ASSERT_EQ(rows.size(), 1u);
  const Verdict v = decide(spec, {1.1, 0.9, 1.2}, opt);
  const ScanRow direct = scan_row_from(v);
  EXPECT_EQ(rows[0].verdict, direct.verdict);
  EXPECT_EQ(rows[0].q_norm, direct.q_norm);
  EXPECT_EQ(rows[0].discriminant, direct.discriminant);
  EXPECT_EQ(rows[0].phi, direct.phi);
  EXPECT_EQ(rows[0].residual, direct.residual);
  EXPECT_EQ(rows[0].verdict, "Metrisable");
}

TEST(Scan, DeterministicAcrossThreadCounts) {
  const ConnectionSpec spec = oracle::fixture();
  const auto box = parse_box("0.8:1.2:2,0.8:1.2:2,0.9:1.1:2");
  const std::string one = scan_csv(scan(spec, box, {}, 1));
  const std::string four = scan_csv(scan(spec, box, {}, 4));
  EXPECT_EQ(one, four);
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 9);
  EXPECT_EQ(one.substr(0, one.find('\n')), "x,y,z,verdict,|Q|,discriminant,phi,psi,residual");
}

TEST(Scan, FlatGrid) {
  const auto rows = scan(load_document(oracle::data("flat.json")).spec, parse_box("0:1:3,0:1:3,0:1:3"), {}, 2);
  ASSERT_EQ(rows.size(), 27u);
  for (const auto& r : rows) EXPECT_EQ(r.verdict, "ProjectivelyFlat");
  EXPECT_EQ(rows[1].point, (Point{0, 0, 0.5}));  // z fastest
}

TEST(Scan, DomainErrorsAreMarked) {
  const auto rows = scan(oracle::fixture(), parse_box("1:1:1,1:1:1,0:1:2"), {}, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].verdict, "DomainError");
  EXPECT_EQ(rows[1].verdict, "Metrisable");
  const std::string csv = scan_csv(rows);
  EXPECT_NE(csv.find("1,1,0,DomainError,,,,,\n"), std::string::npos);
}

TEST(Verify, Statuses) {
  const ConnectionSpec spec = oracle::fixture();
  const auto good = verify_sigma(spec, load_sigma(oracle::data("example_sigma.json")), {1, 1, 1}, 20, 1e-8);
  EXPECT_EQ(good.status, VerifyStatus::Pass);
  EXPECT_EQ(good.residuals.points.size(), 20u);
  const auto bad = verify_sigma(spec, load_sigma(oracle::data("identity_sigma.json")), {1, 1, 1}, 20, 1e-8);
  EXPECT_EQ(bad.status, VerifyStatus::Fail);
  EXPECT_GT(bad.residuals.max_relative, 1e-3);
  Sym2Contra<Expr> zero;
  for (auto& c : zero.c) c = Expr::constant(0.0);
  EXPECT_EQ(verify_sigma(spec, zero, {1, 1, 1}, 5, 1e-8).status, VerifyStatus::Rejected);
}

TEST(Tolerance, EnvironmentOverride) {
  ::unsetenv("METRISE3D_TOL");
  EXPECT_EQ(default_tolerance(), kDefaultTol);
  ::setenv("METRISE3D_TOL", "1e-7", 1);
  EXPECT_EQ(default_tolerance(), 1e-7);
  ::setenv("METRISE3D_TOL", "abc", 1);
  EXPECT_THROW(default_tolerance(), InputError);
  ::unsetenv("METRISE3D_TOL");
}

TEST(Binary, AnalyzeFixture) {
  const fs::path json = fs::temp_directory_path() / ("metrise3d_test_" + std::to_string(::getpid()) + ".json");
  const CliRun r = run_cli("analyze " + oracle::data("example.json") + " --point 1,1,1 --json " + json.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("verdict: Metrisable"), std::string::npos);
  const Report rep = nlohmann::json::parse(read(json)).get<Report>();
  EXPECT_EQ(rep.verdict, "Metrisable");
  EXPECT_NEAR(rep.metric[0].g[0][0] / rep.metric[0].g[2][2], 4.0, 1e-9);
  EXPECT_FALSE(rep.elapsed_ms.has_value());
  fs::remove(json);
}

TEST(Binary, AnalyzeFlat) {
  const CliRun r = run_cli("analyze " + oracle::data("flat.json") + " --point 0.3,0.2,0.1");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("ProjectivelyFlat"), std::string::npos);
}

TEST(Binary, ExitCodes) {
  EXPECT_EQ(run_cli("analyze " + oracle::data("example.json") + " --point 0,0,0").code, 2);
  EXPECT_EQ(run_cli("analyze /nonexistent.json --point 1,1,1").code, 1);
  EXPECT_EQ(run_cli("analyze " + oracle::data("example.json") + " --point 1,1").code, 1);
  EXPECT_EQ(run_cli("analyze " + oracle::data("example.json") + " --order 9").code, 1);
  EXPECT_EQ(run_cli("analyze " + oracle::data("example.json") + " --order 3").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("--help").code, 0);
}

TEST(Binary, Verify) {
  const CliRun good = run_cli("verify " + oracle::data("example.json") + " --sigma " + oracle::data("example_sigma.json"));
  EXPECT_EQ(good.code, 0);
  EXPECT_NE(good.out.find("verify: PASS"), std::string::npos);
  const CliRun bad = run_cli("verify " + oracle::data("example.json") + " --sigma " + oracle::data("identity_sigma.json"));
  EXPECT_EQ(bad.code, 0);
  EXPECT_NE(bad.out.find("verify: FAIL"), std::string::npos);
  const auto zero = temp_file("zero_sigma.json", R"({"sigma": [["0","0","0"],["0","0","0"],["0","0","0"]]})");
  const CliRun rej = run_cli("verify " + oracle::data("example.json") + " --sigma " + zero.string());
  EXPECT_EQ(rej.code, 0);
  EXPECT_NE(rej.out.find("REJECTED"), std::string::npos);
  fs::remove(zero);
}

TEST(Binary, ScanToFile) {
  const fs::path out = fs::temp_directory_path() / ("metrise3d_scan_" + std::to_string(::getpid()) + ".csv");
  const CliRun r = run_cli("scan " + oracle::data("example.json") + " --box 1:1:1,1:1:1,0:1:2 --threads 2 --out " +
                        out.string());
  EXPECT_EQ(r.code, 0) << r.out;
  const std::string csv = read(out);
  EXPECT_NE(csv.find("DomainError"), std::string::npos);
  EXPECT_NE(csv.find("Metrisable"), std::string::npos);
  fs::remove(out);
}

TEST(Binary, ToleranceFromEnvironment) {
  const fs::path json = fs::temp_directory_path() / ("metrise3d_tol_" + std::to_string(::getpid()) + ".json");
  const CliRun r = run_cli("analyze " + oracle::data("flat.json") + " --point 1,1,1 --json " + json.string(),
                        "METRISE3D_TOL=1e-7");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(read(json))["tol"].get<double>(), 1e-7);
  const CliRun flag = run_cli("analyze " + oracle::data("flat.json") + " --point 1,1,1 --tol 1e-6 --json " +
                               json.string(),
                           "METRISE3D_TOL=1e-7");
  EXPECT_EQ(flag.code, 0);
  EXPECT_EQ(nlohmann::json::parse(read(json))["tol"].get<double>(), 1e-6);
  EXPECT_EQ(run_cli("analyze " + oracle::data("flat.json") + " --point 1,1,1", "METRISE3D_TOL=oops").code, 1);
  fs::remove(json);
}

namespace {

/// Every key a schema object lists as required is present, recursively
/// through properties and array items.
void expect_conforms(const nlohmann::json& value, const nlohmann::json& schema, const std::string& path) {
  if (schema.contains("required")) {
    for (const auto& key : schema["required"])
      EXPECT_TRUE(value.contains(key.get<std::string>())) << path << "." << key;
  }
  if (schema.contains("enum") && !value.is_array()) {
    EXPECT_NE(std::find(schema["enum"].begin(), schema["enum"].end(), value), schema["enum"].end()) << path;
  }
  if (schema.contains("const")) {
    EXPECT_EQ(value, schema["const"]) << path;
  }
  if (schema.contains("properties") && value.is_object())
    for (const auto& [key, sub] : schema["properties"].items())
      if (value.contains(key)) expect_conforms(value[key], sub, path + "." + key);
  if (schema.contains("items") && value.is_array() && schema["items"].is_object())
    for (const auto& v : value) expect_conforms(v, schema["items"], path + "[]");
}

}  // namespace

TEST(Docs, ShippedExampleIsTheFixture) {
  const std::string docs = std::string(METRISE3D_DOCS_DIR);
  EXPECT_EQ(read(docs + "/example.json"), read(oracle::data("example.json")));
  const auto schema = nlohmann::json::parse(read(docs + "/input-schema.json"));
  expect_conforms(nlohmann::json::parse(read(docs + "/example.json")), schema, "example");
}

TEST(Docs, ReportsConformToSchema) {
  const auto schema = nlohmann::json::parse(read(std::string(METRISE3D_DOCS_DIR) + "/report-schema.json"));
  ConnectionSpec perturbed = oracle::fixture();
  perturbed.gamma[0][0][1] = perturbed.gamma[0][0][1] + parse("0.1*x");
  for (const auto& v : {decide(oracle::fixture(), {1, 1, 1}),
                        decide(load_document(oracle::data("flat.json")).spec, {1, 1, 1}),
                        decide(perturbed, {1, 1, 1})}) {
    Report r = make_report(v, "doc");
    r.elapsed_ms = 1.0;
    expect_conforms(nlohmann::json(r), schema, "report");
  }
}
