#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "vvc_cli.hpp"

using nlohmann::json;
using vvc::testing::data_path;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result vvc_run(std::vector<std::string> args) {
  args.insert(args.begin(), "vvc");
  std::ostringstream out, err;
  Result r;
  r.code = vvc::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string scratch(const std::string& name) {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("vvc_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& path) {
  std::ifstream f(path);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

std::size_t timestamps(const std::string& path) {
  std::set<std::string> ids;
  const auto rows = lines(path);
  for (std::size_t i = 1; i < rows.size(); ++i) ids.insert(rows[i].substr(0, rows[i].find(',')));
  return ids.size();
}

const std::string two_bus = data_path("feeders/two_bus.json");
const std::string ieee33 = data_path("feeders/ieee33.json");

/// Runs synth -> split -> opoint -> linearize -> design once for the 33-node feeder.
struct Pipeline {
  std::string year = scratch("year.csv");
  std::string prefix = scratch("split");
  std::string train = prefix + ".train.csv";
  std::string test = prefix + ".test.csv";
  std::string opoint = scratch("op.json");
  std::string model = scratch("model.json");
  std::string design = scratch("rho.json");
  std::vector<Result> steps;

  Pipeline() {
    steps.push_back(vvc_run({"--seed", "42", "scenario", "synth", "--feeder", ieee33, "--config",
                             data_path("scenarios/ieee33_synth.json"), "--out", year}));
    steps.push_back(vvc_run({"--seed", "42", "scenario", "split", "--feeder", ieee33, "--scenarios", year,
                             "--out", prefix}));
    steps.push_back(vvc_run({"scenario", "opoint", "--feeder", ieee33, "--scenarios", train, "--out", opoint}));
    steps.push_back(vvc_run({"linearize", "--feeder", ieee33, "--opoint", opoint, "--out", model}));
    steps.push_back(vvc_run({"design", "--model", model, "--feeder", ieee33, "--scenarios", train,
                             "--scenario", "worst", "--criterion", "rho", "--out", design}));
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST(Cli, PowerFlowZeroScenario) {
  const Result r = vvc_run({"pf", "--feeder", two_bus});
  ASSERT_EQ(r.code, 0) << r.err;
  const json doc = json::parse(r.out);
  EXPECT_TRUE(doc["converged"].get<bool>());
  for (const auto& [id, v] : doc["v"].items()) EXPECT_NEAR(v.get<double>(), 1.0, 1e-12) << id;
}

TEST(Cli, PowerFlowNotConverged) {
  const std::string csv = scratch("heavy.csv");
  std::ofstream(csv) << "timestamp,node_id,p_d_kw,q_d_kvar,p_g_kw\nh0,n1,9000,9000,0\n";
  const Result r = vvc_run({"pf", "--feeder", two_bus, "--scenarios", csv, "--scenario", "h0"});
  EXPECT_EQ(r.code, 1) << r.out << r.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(vvc_run({"frobnicate"}).code, 2);
  EXPECT_EQ(vvc_run({"pf"}).code, 2);
  EXPECT_EQ(vvc_run({"pf", "--feeder", scratch("missing.json")}).code, 2);
  EXPECT_EQ(vvc_run({"stability", "--criterion", "lyapunov", "--model", two_bus, "--k", two_bus}).code, 2);

  const std::string bad = scratch("bad_feeder.json");
  std::ofstream(bad) << "{\"nodes\": [";
  const Result r = vvc_run({"pf", "--feeder", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, Help) {
  const Result r = vvc_run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("simulate"), std::string::npos);
}

TEST(Cli, DesignWithoutGenerators) {
  const std::string model = scratch("two_bus_model.json");
  const std::string design = scratch("two_bus_design.json");
  ASSERT_EQ(vvc_run({"linearize", "--feeder", two_bus, "--out", model}).code, 0);
  const Result r = vvc_run({"design", "--model", model, "--scenario", "zero", "--out", design});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("no generators"), std::string::npos);
  EXPECT_TRUE(json::parse(slurp(design))["k"].empty());
  EXPECT_EQ(vvc_run({"--quiet", "design", "--model", model, "--scenario", "zero", "--out", design}).err, "");
}

TEST(Cli, StabilityRegion) {
  const std::string out = scratch("region.csv");
  const Result r = vvc_run({"stability", "region", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(out);
  ASSERT_EQ(rows.size(), 40001u);
  EXPECT_EQ(rows[0], "k1,k2,rho_feasible,norm2_feasible,holder_feasible");
  const json doc = json::parse(r.out);
  EXPECT_LE(doc["holder_feasible"].get<int>(), doc["norm2_feasible"].get<int>());
  EXPECT_LE(doc["norm2_feasible"].get<int>(), doc["rho_feasible"].get<int>());
}

TEST(CliPipeline, StepsSucceed) {
  const Pipeline& p = pipeline();
  for (std::size_t i = 0; i < p.steps.size(); ++i) EXPECT_EQ(p.steps[i].code, 0) << i << ": " << p.steps[i].err;
  EXPECT_EQ(timestamps(p.train), 7884u);
  EXPECT_EQ(timestamps(p.test), 876u);
  EXPECT_EQ(json::parse(slurp(p.opoint))["format"], "vvc-opoint");
  const json d = json::parse(slurp(p.design));
  EXPECT_EQ(d["criterion"], "rho");
  EXPECT_EQ(d["k"].size(), 6u);
}

TEST(CliPipeline, Manifest) {
  const Pipeline& p = pipeline();
  const json m = json::parse(slurp(p.design + ".manifest.json"));
  EXPECT_EQ(m["seed"], 42);
  EXPECT_TRUE(m["inputs"].contains(p.model));
  EXPECT_TRUE(m["inputs"].contains(p.train));
  EXPECT_EQ(m["inputs"][p.model].get<std::string>().size(), 64u);
  EXPECT_EQ(m["outputs"][0], p.design);
  EXPECT_TRUE(m.contains("duration_s"));
}

TEST(CliPipeline, DesignIsDeterministic) {
  const Pipeline& p = pipeline();
  const std::string again = scratch("rho_again.json");
  ASSERT_EQ(vvc_run({"design", "--model", p.model, "--feeder", ieee33, "--scenarios", p.train, "--scenario",
                     "worst", "--criterion", "rho", "--out", again})
                .code,
            0);
  EXPECT_EQ(slurp(p.design), slurp(again));
}

TEST(CliPipeline, StabilityVerdicts) {
  const Pipeline& p = pipeline();
  const Result ok = vvc_run({"stability", "--model", p.model, "--k", p.design});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_TRUE(json::parse(ok.out)["feasible"].get<bool>());
  const Result bad = vvc_run({"stability", "--model", p.model, "--k", p.design, "--scale", "1.1"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_FALSE(json::parse(bad.out)["feasible"].get<bool>());
}

TEST(CliPipeline, SimulateImprovesOnOpenLoop) {
  const Pipeline& p = pipeline();
  const std::vector<std::string> base{"simulate", "--feeder", ieee33, "--design", p.design, "--scenarios", p.train};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return vvc_run(a);
  };
  const Result closed = with({});
  ASSERT_EQ(closed.code, 0) << closed.err;
  const json c = json::parse(closed.out);
  EXPECT_EQ(c["outcome"], "converged");
  const json open = json::parse(with({"--scale", "0"}).out);
  EXPECT_LE(c["dev2"].get<double>(), open["dev2"].get<double>());

  const Result unstable = with({"--scale", "1.1"});
  EXPECT_EQ(unstable.code, 0);
  EXPECT_EQ(json::parse(unstable.out)["outcome"], "diverged");

  const Result inc = with({"--scale", "25", "--mode", "incremental", "--dt-over-tau", "0.05"});
  EXPECT_EQ(json::parse(inc.out)["outcome"], "converged");
}

TEST(CliPipeline, ScenarioTools) {
  const Pipeline& p = pipeline();
  const Result w = vvc_run({"scenario", "worst", "--feeder", ieee33, "--scenarios", p.train});
  ASSERT_EQ(w.code, 0);
  EXPECT_GT(json::parse(w.out)["dev2"].get<double>(), 0.0);
  const Result h = vvc_run({"scenario", "hours", "--feeder", ieee33, "--scenarios", p.test});
  ASSERT_EQ(h.code, 0);
  const json hours = json::parse(h.out);
  for (const char* k : {"A", "B", "C", "D"}) EXPECT_TRUE(hours.contains(k)) << k;
}

TEST(CliPipeline, Reports) {
  const Pipeline& p = pipeline();
  const std::string bars = scratch("bars.csv");
  ASSERT_EQ(vvc_run({"report", "bars", "--feeder", ieee33, "--scenarios", p.test, "--designs", p.design,
                     "--out", bars})
                .code,
            0);
  const auto b = lines(bars);
  EXPECT_EQ(b[0], "hour,scenario_id,scheme,dev2,devinf,outcome");
  EXPECT_EQ(b.size(), 1u + 4u * 2u);

  const std::string cloud = scratch("cloud.csv");
  ASSERT_EQ(vvc_run({"report", "cloud", "--feeder", ieee33, "--scenarios", p.test, "--designs", p.design,
                     "--limit", "3", "--out", cloud})
                .code,
            0);
  const auto c = lines(cloud);
  EXPECT_EQ(c[0], "depth,node_id,scenario_id,scheme,v_pu");
  EXPECT_LE(c.size(), 1u + 3u * 2u * 33u);

  const std::string hist = scratch("hist.csv");
  ASSERT_EQ(vvc_run({"report", "histogram", "--feeder", ieee33, "--model", p.model, "--scenarios", p.test,
                     "--bins", "20", "--out", hist})
                .code,
            0);
  const auto h = lines(hist);
  EXPECT_EQ(h[0], "bin_lo,bin_hi,lpf_count,ldf_count");
  EXPECT_EQ(h.size(), 21u);

  const std::string trace = scratch("trace.csv");
  ASSERT_EQ(vvc_run({"report", "trace", "--feeder", ieee33, "--design", p.design, "--scenarios", p.train,
                     "--record-every", "50", "--out", trace})
                .code,
            0);
  EXPECT_EQ(lines(trace)[0], "step,node_id,v_pu,qg_pu");
  EXPECT_EQ(vvc_run({"report", "trace", "--feeder", ieee33, "--design", p.design}).code, 2);
}

TEST(CliPipeline, ValidateModel) {
  const Pipeline& p = pipeline();
  const std::string per_node = scratch("errors.csv");
  const Result r = vvc_run({"validate-model", "--feeder", ieee33, "--model", p.model, "--scenarios", p.test,
                            "--out", per_node});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(lines(per_node).size(), 1u);
}
