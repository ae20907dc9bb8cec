#pragma once

// Command-line front end. run() maps exceptions to exit codes:
// 0 ok, 1 domain error, 2 usage or parse error.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vvc/design.hpp"
#include "vvc/fingerprint.hpp"
#include "vvc/linmodels.hpp"
#include "vvc/network.hpp"
#include "vvc/powerflow.hpp"
#include "vvc/scenario.hpp"
#include "vvc/simloop.hpp"
#include "vvc/stability.hpp"

namespace vvc::cli {

inline constexpr const char* kToolVersion = "0.1.0";

using json = nlohmann::json;

struct Globals {
  std::uint64_t seed = 42;
  unsigned threads = 0;
  bool quiet = false;
  double pf_tol = 1e-10;
  int pf_max_iter = 100;

  PfConfig pf() const { return {pf_tol, pf_max_iter}; }
};

/// Collects what a command read and wrote, then drops a manifest next to each output.
class Session {
 public:
  Session(std::vector<std::string> argv, std::ostream& out, std::ostream& err)
      : argv_(std::move(argv)), out_(out), err_(err), start_(std::chrono::steady_clock::now()) {}

  std::ostream& out() { return out_; }

  void warn(const Globals& g, const std::string& msg) {
    if (!g.quiet) err_ << "warning: " << msg << '\n';
  }

  void input(const std::string& path) {
    if (!path.empty()) inputs_[path] = file_fingerprint(path);
  }

  void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write output file: " + path);
    f << text;
    outputs_.push_back(path);
  }

  void write_json(const std::string& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

  void finish(const CLI::App* sub, const Globals& g) {
    if (outputs_.empty()) return;
    json manifest;
    std::string cmd;
    for (const auto& a : argv_) cmd += (cmd.empty() ? "" : " ") + a;
    manifest["command_line"] = cmd;
    manifest["tool_version"] = kToolVersion;
    manifest["seed"] = g.seed;
    manifest["threads"] = g.threads;
    json config = json::object();
    for (const CLI::App* app = sub; app != nullptr; app = app->get_parent()) {
      for (const CLI::Option* opt : app->get_options()) {
        if (opt->get_name().empty() || opt->get_name() == "--help" || opt->count() == 0) continue;
        if (!config.contains(opt->get_name())) config[opt->get_name()] = opt->results();
      }
    }
    manifest["config"] = config;
    manifest["inputs"] = inputs_;
    manifest["outputs"] = outputs_;
    manifest["duration_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    for (const auto& path : outputs_) {
      std::ofstream f(path + ".manifest.json");
      f << manifest.dump(2) << '\n';
    }
  }

 private:
  std::vector<std::string> argv_;
  std::ostream& out_;
  std::ostream& err_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

namespace detail {

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline json voltages_json(const NetworkModel& net, const Eigen::VectorXd& v) {
  json out = json::object();
  for (int i = 0; i < net.n(); ++i) out[net.node_id(i)] = v[i];
  return out;
}

inline void check_fingerprint(const NetworkModel& net, const std::string& fp, const char* what) {
  if (!fp.empty() && fp != net.fingerprint()) {
    throw DataError(std::string(what) + " was built for a different feeder (fingerprint mismatch)");
  }
}

inline OperatingPoint load_opoint(const std::string& path, const NetworkModel& net) {
  const json doc = read_json(path);
  try {
    if (doc.value("format", std::string()) != "vvc-opoint") throw ParseError("not an operating-point file");
    check_fingerprint(net, doc.value("feeder_fingerprint", std::string()), "operating point");
    return {vvc::detail::vector_from_json(doc.at("p0"), net.n(), "p0"),
            vvc::detail::vector_from_json(doc.at("q0"), net.n(), "q0")};
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// "zero", "mean", "worst", a scenario id in `set`, or a CSV file whose first
/// scenario is used.
inline Scenario resolve_scenario(const std::string& which, const ScenarioSet* set,
                                 const NetworkModel& net, const Globals& g) {
  if (which == "zero") return Scenario::zeros("zero", net.n());
  if (set != nullptr) {
    if (which == "worst") return select_worst_case(*set, net, g.pf(), g.threads);
    if (which == "mean") return mean_scenario(*set);
    for (const auto& s : set->scenarios) {
      if (s.id == which) return s;
    }
  }
  if (std::filesystem::is_regular_file(which)) {
    ScenarioSet file_set = load_timeseries(which, net);
    if (file_set.empty()) throw DataError("scenario file is empty: " + which);
    return file_set[0];
  }
  if (set == nullptr && (which == "worst" || which == "mean")) {
    throw ConfigError("--scenario " + which + " requires --scenarios");
  }
  throw DataError("unknown scenario: " + which);
}

struct LoadedDesign {
  std::string label;
  GainVector k;
  json doc;
};

inline LoadedDesign load_design(const std::string& path, const NetworkModel& net) {
  LoadedDesign d;
  d.doc = read_json(path);
  check_fingerprint(net, d.doc.value("feeder_fingerprint", std::string()), "design");
  std::vector<std::string> ids;
  for (int i = 0; i < net.n(); ++i) ids.push_back(net.node_id(i));
  d.k = gains_from_design_json(d.doc, ids);
  d.k.validate(net.generators());
  d.label = d.doc.value("criterion", std::filesystem::path(path).stem().string());
  return d;
}

inline std::vector<std::string> node_ids(const NetworkModel& net) {
  std::vector<std::string> ids;
  for (int i = 0; i < net.n(); ++i) ids.push_back(net.node_id(i));
  return ids;
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Decentralized Volt-VAr control design toolkit", "vvc"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");
  app.add_flag("--quiet", g.quiet, "suppress warnings");
  app.add_option("--pf-tol", g.pf_tol, "power flow mismatch tolerance (p.u.)");
  app.add_option("--pf-max-iter", g.pf_max_iter, "power flow iteration cap");

  Session session(args, out, err);
  std::function<int()> action;

  // pf ----------------------------------------------------------------------
  auto* pf = app.add_subcommand("pf", "solve the AC power flow for one scenario");
  std::string feeder, scenarios_path, scenario_spec = "zero", out_path;
  pf->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  pf->add_option("--scenarios", scenarios_path)->check(CLI::ExistingFile);
  pf->add_option("--scenario", scenario_spec);
  pf->add_option("--out", out_path);
  pf->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      session.input(feeder);
      std::optional<ScenarioSet> set;
      if (!scenarios_path.empty()) {
        set = load_timeseries(scenarios_path, net);
        session.input(scenarios_path);
      }
      const Scenario scen = detail::resolve_scenario(scenario_spec, set ? &*set : nullptr, net, g);
      const VoltageProfile prof = solve_pf(net, open_loop_injection(scen), g.pf());
      json doc{{"scenario_id", scen.id},
               {"converged", prof.converged},
               {"iterations", prof.iterations},
               {"max_mismatch", prof.max_mismatch},
               {"v", detail::voltages_json(net, prof.v)}};
      out << doc.dump(2) << '\n';
      if (!out_path.empty()) session.write_json(out_path, doc);
      return prof.converged ? 0 : 1;
    };
  });

  // linearize ---------------------------------------------------------------
  auto* lin = app.add_subcommand("linearize", "build LPF Jacobians and the LDF model");
  std::string opoint_path;
  double fd_eps = 1e-6;
  lin->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  auto* lin_src = lin->add_option("--scenarios", scenarios_path, "training set (averaged)")
                      ->check(CLI::ExistingFile);
  lin->add_option("--opoint", opoint_path)->check(CLI::ExistingFile)->excludes(lin_src);
  lin->add_option("--eps", fd_eps, "finite-difference step");
  lin->add_option("--out", out_path)->required();
  lin->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      session.input(feeder);
      OperatingPoint op{Eigen::VectorXd::Zero(net.n()), Eigen::VectorXd::Zero(net.n())};
      if (!opoint_path.empty()) {
        op = detail::load_opoint(opoint_path, net);
        session.input(opoint_path);
      } else if (!scenarios_path.empty()) {
        op = average_operating_point(load_timeseries(scenarios_path, net));
        session.input(scenarios_path);
      } else {
        session.warn(g, "no operating point given; linearizing at zero injection");
      }
      LinearizationConfig cfg;
      cfg.finite_diff_eps = fd_eps;
      cfg.pf = g.pf();
      cfg.threads = g.threads;
      const LpfModel lpf = build_jacobians(net, op, cfg);
      session.write_json(out_path, model_to_json(lpf, build_ldf(net)));
      return 0;
    };
  });

  // validate-model ----------------------------------------------------------
  auto* val = app.add_subcommand("validate-model", "compare LPF and LDF against the AC solution");
  std::string model_path, hist_path;
  int bins = 40;
  val->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  val->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  val->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  val->add_option("--bins", bins)->check(CLI::PositiveNumber);
  val->add_option("--out", out_path, "per-node error CSV");
  val->add_option("--histogram", hist_path, "binned error CSV");
  val->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      const ModelBundle model = load_model(model_path);
      detail::check_fingerprint(net, model.lpf.feeder_fingerprint, "model");
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      for (const auto& p : {feeder, model_path, scenarios_path}) session.input(p);
      const ErrorReport rep = model_error_report(net, model.lpf, model.ldf, set, g.pf(), g.threads);
      for (const auto& id : rep.skipped) session.warn(g, "scenario " + id + " skipped (power flow failed)");
      if (!out_path.empty()) {
        std::ostringstream s;
        write_error_csv(s, rep);
        session.write_text(out_path, s.str());
      }
      if (!hist_path.empty()) {
        std::ostringstream s;
        write_histogram_csv(s, rep.histogram(bins));
        session.write_text(hist_path, s.str());
      }
      out << json{{"scenarios", set.size()},
                  {"skipped", rep.skipped.size()},
                  {"max_abs_error_lpf", rep.max_abs_lpf},
                  {"max_abs_error_ldf", rep.max_abs_ldf}}
                 .dump(2)
          << '\n';
      return 0;
    };
  });

  // stability ---------------------------------------------------------------
  auto* stab = app.add_subcommand("stability", "evaluate a stability criterion for a design");
  std::string design_path, criterion_name = "rho", plant = "lpf";
  double epsilon = kDefaultStabilityEpsilon;
  double scale = 1.0;
  stab->add_option("--model", model_path)->check(CLI::ExistingFile);
  stab->add_option("--k", design_path, "design file")->check(CLI::ExistingFile);
  stab->add_option("--criterion", criterion_name)->check(CLI::IsMember({"rho", "norm2", "holder"}));
  stab->add_option("--epsilon", epsilon);
  stab->add_option("--plant", plant)->check(CLI::IsMember({"lpf", "ldf"}));
  stab->add_option("--scale", scale, "multiply slopes before checking");
  auto* region = stab->add_subcommand("region", "sample the two-generator feasible regions");
  std::vector<double> jq_entries{1.5504, 1.5504, 1.5505, 1.6144};
  int grid = 200;
  double lo = -1.5, hi = 0.0;
  region->add_option("--jq", jq_entries, "row-major 2x2 sensitivity")->expected(4)->delimiter(',');
  region->add_option("--grid", grid);
  region->add_option("--lo", lo);
  region->add_option("--hi", hi);
  region->add_option("--epsilon", epsilon);
  region->add_option("--out", out_path)->required();
  stab->callback([&] {
    if (region->parsed()) return;
    action = [&] {
      if (model_path.empty() || design_path.empty()) {
        throw CLI::ValidationError("stability", "--model and --k are required");
      }
      const ModelBundle model = load_model(model_path);
      const json design = detail::read_json(design_path);
      session.input(model_path);
      session.input(design_path);
      GainVector k = gains_from_design_json(design, model.lpf.node_ids).scaled(scale);
      const StabilityVerdict v =
          plant == "ldf" ? check_stability(model.ldf, k, parse_criterion(criterion_name), epsilon)
                         : check_stability(model.lpf, k, parse_criterion(criterion_name), epsilon);
      json doc{{"criterion", std::string(to_string(v.criterion))},
               {"plant", plant},
               {"value", v.value},
               {"margin", v.margin},
               {"feasible", v.feasible},
               {"epsilon", v.epsilon}};
      if (!v.diagnostic.empty()) doc["diagnostic"] = v.diagnostic;
      out << doc.dump(2) << '\n';
      return v.feasible ? 0 : 1;
    };
  });
  region->callback([&] {
    action = [&] {
      Eigen::Matrix2d S;
      S << jq_entries[0], jq_entries[1], jq_entries[2], jq_entries[3];
      const auto samples = sample_region(S, grid, lo, hi, epsilon);
      std::ostringstream s;
      s << "k1,k2,rho_feasible,norm2_feasible,holder_feasible\n";
      std::size_t counts[3] = {0, 0, 0};
      for (const auto& r : samples) {
        s << vvc::detail::format_double(r.k1) << ',' << vvc::detail::format_double(r.k2) << ','
          << int(r.rho) << ',' << int(r.norm2) << ',' << int(r.holder) << '\n';
        counts[0] += r.rho;
        counts[1] += r.norm2;
        counts[2] += r.holder;
      }
      session.write_text(out_path, s.str());
      out << json{{"points", samples.size()},
                  {"rho_feasible", counts[0]},
                  {"norm2_feasible", counts[1]},
                  {"holder_feasible", counts[2]}}
                 .dump(2)
          << '\n';
      return 0;
    };
  });

  // design ------------------------------------------------------------------
  auto* des = app.add_subcommand("design", "optimize VVC slopes");
  std::string design_scenario = "worst";
  double beta = kDefaultBeta;
  int starts = 8;
  des->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  des->add_option("--feeder", feeder, "needed for --scenario worst")->check(CLI::ExistingFile);
  des->add_option("--scenarios", scenarios_path)->check(CLI::ExistingFile);
  des->add_option("--scenario", design_scenario, "worst, mean, zero, or a scenario id");
  des->add_option("--criterion", criterion_name)->check(CLI::IsMember({"rho", "norm2", "holder"}));
  des->add_option("--beta", beta);
  des->add_option("--epsilon", epsilon);
  des->add_option("--starts", starts)->check(CLI::PositiveNumber);
  des->add_option("--plant", plant)->check(CLI::IsMember({"lpf", "ldf"}));
  des->add_option("--out", out_path)->required();
  des->callback([&] {
    action = [&] {
      const ModelBundle model = load_model(model_path);
      session.input(model_path);
      const int n = model.lpf.n();
      Scenario scen = Scenario::zeros("zero", n);
      if (design_scenario != "zero") {
        if (feeder.empty()) throw CLI::ValidationError("design", "--feeder is required for this --scenario");
        const NetworkModel net = load_feeder(feeder);
        detail::check_fingerprint(net, model.lpf.feeder_fingerprint, "model");
        session.input(feeder);
        std::optional<ScenarioSet> set;
        if (!scenarios_path.empty()) {
          set = load_timeseries(scenarios_path, net);
          session.input(scenarios_path);
        }
        scen = detail::resolve_scenario(design_scenario, set ? &*set : nullptr, net, g);
      }
      const Eigen::VectorXd v_ref = Eigen::VectorXd::Ones(n);
      DesignProblem problem =
          plant == "ldf" ? make_problem(model.ldf, ldf_offset(model.ldf, scen), v_ref)
                         : make_problem(model.lpf, lpf_offset(model.lpf, scen), v_ref);
      problem.beta = beta;
      problem.epsilon = epsilon;
      problem.criterion = parse_criterion(criterion_name);
      problem.multistart = starts;
      problem.seed = g.seed;
      problem.threads = g.threads;
      if (problem.n_g() == 0) session.warn(g, "model has no generators; writing an empty design");
      const DesignResult result = optimize_slopes(problem);
      DesignMetadata meta{plant, scen.id, model.lpf.feeder_fingerprint, model.lpf.node_ids};
      session.write_json(out_path, design_to_json(result, problem, meta));
      out << json{{"objective", result.objective},
                  {"criterion", criterion_name},
                  {"value", result.verdict.value},
                  {"feasible", result.verdict.feasible},
                  {"scenario_id", scen.id}}
                 .dump(2)
          << '\n';
      return 0;
    };
  });

  // simulate ----------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "closed-loop simulation against the AC power flow");
  std::string mode_name = "nonincremental", summary_path, sim_scenario = "worst";
  double dt_over_tau = 1.0;
  LoopConfig loop;
  auto add_sim_options = [&](CLI::App* cmd) {
    cmd->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
    cmd->add_option("--design", design_path)->required()->check(CLI::ExistingFile);
    cmd->add_option("--scenarios", scenarios_path)->check(CLI::ExistingFile);
    cmd->add_option("--scenario", sim_scenario, "id, worst, mean, zero, or a scenario CSV");
    cmd->add_option("--mode", mode_name)->check(CLI::IsMember({"nonincremental", "incremental"}));
    cmd->add_option("--dt-over-tau", dt_over_tau);
    cmd->add_option("--scale", scale, "multiply design slopes");
    cmd->add_option("--conv-tol", loop.conv_tol);
    cmd->add_option("--max-steps", loop.max_steps);
    cmd->add_option("--v-limit", loop.divergence_v_limit);
    cmd->add_option("--record-every", loop.record_every);
    cmd->add_option("--out", out_path, "trace CSV");
    cmd->add_option("--summary", summary_path, "summary JSON");
  };
  add_sim_options(sim);
  auto simulate_action = [&] {
    const NetworkModel net = load_feeder(feeder);
    session.input(feeder);
    session.input(design_path);
    const auto design = detail::load_design(design_path, net);
    std::optional<ScenarioSet> set;
    if (!scenarios_path.empty()) {
      set = load_timeseries(scenarios_path, net);
      session.input(scenarios_path);
    }
    const Scenario scen = detail::resolve_scenario(sim_scenario, set ? &*set : nullptr, net, g);
    loop.mode = parse_loop_mode(mode_name);
    loop.dt_over_tau = loop.mode == LoopMode::incremental ? dt_over_tau : 1.0;
    if (loop.mode == LoopMode::nonincremental && dt_over_tau != 1.0) {
      session.warn(g, "--dt-over-tau ignored in nonincremental mode");
    }
    const ClosedLoopTrace trace = simulate_closed_loop(net, design.k.scaled(scale), scen,
                                                       Eigen::VectorXd::Ones(net.n()), loop, g.pf());
    if (!out_path.empty()) {
      std::ostringstream s;
      write_trace_csv(s, trace, detail::node_ids(net));
      session.write_text(out_path, s.str());
    }
    json summary = trace_summary_json(trace);
    summary["scenario_id"] = scen.id;
    summary["scale"] = scale;
    summary["mode"] = mode_name;
    if (!summary_path.empty()) session.write_json(summary_path, summary);
    out << summary.dump(2) << '\n';
    return 0;
  };
  sim->callback([&] { action = simulate_action; });

  // scenario ----------------------------------------------------------------
  auto* scn = app.add_subcommand("scenario", "scenario set tools");
  scn->require_subcommand(1);
  double fraction = 0.9;
  std::string train_out, test_out, config_path;
  auto* split = scn->add_subcommand("split", "seeded train/test split");
  split->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  split->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  split->add_option("--fraction", fraction);
  split->add_option("--out", out_path, "output prefix: <out>.train.csv and <out>.test.csv");
  split->add_option("--train", train_out);
  split->add_option("--test", test_out);
  split->callback([&] {
    action = [&] {
      if (train_out.empty() && !out_path.empty()) train_out = out_path + ".train.csv";
      if (test_out.empty() && !out_path.empty()) test_out = out_path + ".test.csv";
      if (train_out.empty() || test_out.empty()) {
        throw CLI::ValidationError("split", "--out or both --train and --test are required");
      }
      const NetworkModel net = load_feeder(feeder);
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      session.input(feeder);
      session.input(scenarios_path);
      const SplitResult r = split_train_test(set, fraction, g.seed);
      std::ostringstream a, b;
      write_timeseries(a, r.train, net);
      write_timeseries(b, r.test, net);
      session.write_text(train_out, a.str());
      session.write_text(test_out, b.str());
      out << json{{"train", r.train.size()}, {"test", r.test.size()}, {"seed", g.seed}}.dump(2) << '\n';
      return 0;
    };
  });
  auto* opoint = scn->add_subcommand("opoint", "average operating point of a training set");
  opoint->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  opoint->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  opoint->add_option("--out", out_path)->required();
  opoint->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      session.input(feeder);
      session.input(scenarios_path);
      const OperatingPoint op = average_operating_point(set);
      session.write_json(out_path, {{"format", "vvc-opoint"},
                                    {"feeder_fingerprint", net.fingerprint()},
                                    {"node_ids", detail::node_ids(net)},
                                    {"scenarios", set.size()},
                                    {"p0", detail::to_std(op.p0)},
                                    {"q0", detail::to_std(op.q0)}});
      return 0;
    };
  });
  auto* worst = scn->add_subcommand("worst", "worst-case (max open-loop dev2) scenario");
  worst->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  worst->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  worst->add_option("--out", out_path);
  worst->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      session.input(feeder);
      session.input(scenarios_path);
      const auto stats = open_loop_scan(set, net, g.pf(), g.threads);
      for (std::size_t i = 0; i < set.size(); ++i) {
        if (!stats[i].converged) session.warn(g, "scenario " + set[i].id + " skipped (power flow failed)");
      }
      const std::size_t idx = select_worst_case_index(set, net, g.pf(), g.threads);
      const json doc{{"scenario_id", set[idx].id}, {"dev2", stats[idx].dev2}};
      out << doc.dump(2) << '\n';
      if (!out_path.empty()) session.write_json(out_path, doc);
      return 0;
    };
  });
  auto* hours = scn->add_subcommand("hours", "exemplary hours A-D of a test set");
  hours->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  hours->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  hours->add_option("--out", out_path);
  hours->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      session.input(feeder);
      session.input(scenarios_path);
      const ExemplaryHours h = select_exemplary_hours(set, net, g.pf(), g.threads);
      const json doc{{"A", set[h.a].id}, {"B", set[h.b].id}, {"C", set[h.c].id}, {"D", set[h.d].id}};
      out << doc.dump(2) << '\n';
      if (!out_path.empty()) session.write_json(out_path, doc);
      return 0;
    };
  });
  auto* synth = scn->add_subcommand("synth", "synthesize a year of hourly scenarios");
  synth->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  synth->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out_path)->required();
  synth->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      session.input(feeder);
      session.input(config_path);
      const SynthConfig cfg = parse_synth_config(detail::read_json(config_path), net);
      const ScenarioSet set = synthesize_year(net, cfg, g.seed);
      std::ostringstream s;
      write_timeseries(s, set, net);
      session.write_text(out_path, s.str());
      out << json{{"scenarios", set.size()}, {"seed", g.seed}}.dump(2) << '\n';
      return 0;
    };
  });

  // report ------------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "plot-ready report files");
  rep->require_subcommand(1);
  auto* rhist = rep->add_subcommand("histogram", "binned LPF/LDF error histogram");
  rhist->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  rhist->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  rhist->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  rhist->add_option("--bins", bins)->check(CLI::PositiveNumber);
  rhist->add_option("--out", out_path)->required();
  rhist->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      const ModelBundle model = load_model(model_path);
      detail::check_fingerprint(net, model.lpf.feeder_fingerprint, "model");
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      for (const auto& p : {feeder, model_path, scenarios_path}) session.input(p);
      const ErrorReport r = model_error_report(net, model.lpf, model.ldf, set, g.pf(), g.threads);
      std::ostringstream s;
      write_histogram_csv(s, r.histogram(bins));
      session.write_text(out_path, s.str());
      return 0;
    };
  });

  std::vector<std::string> design_paths;
  auto* rbars = rep->add_subcommand("bars", "dev2/devinf per exemplary hour and scheme");
  rbars->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  rbars->add_option("--scenarios", scenarios_path, "test set")->required()->check(CLI::ExistingFile);
  rbars->add_option("--designs", design_paths)->required()->delimiter(',')->check(CLI::ExistingFile);
  rbars->add_option("--out", out_path)->required();
  rbars->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      const ScenarioSet set = load_timeseries(scenarios_path, net);
      session.input(feeder);
      session.input(scenarios_path);
      std::vector<detail::LoadedDesign> designs;
      for (const auto& p : design_paths) {
        designs.push_back(detail::load_design(p, net));
        session.input(p);
      }
      const ExemplaryHours h = select_exemplary_hours(set, net, g.pf(), g.threads);
      const std::pair<const char*, std::size_t> picks[] = {{"A", h.a}, {"B", h.b}, {"C", h.c}, {"D", h.d}};
      const Eigen::VectorXd v_ref = Eigen::VectorXd::Ones(net.n());
      std::ostringstream s;
      s << "hour,scenario_id,scheme,dev2,devinf,outcome\n";
      for (const auto& [hour, idx] : picks) {
        const Scenario& scen = set[idx];
        const VoltageProfile open = solve_pf(net, open_loop_injection(scen), g.pf());
        const DeviationMetrics m0 = deviation_metrics(open.v, v_ref);
        s << hour << ',' << scen.id << ",open_loop," << vvc::detail::format_double(m0.dev2) << ','
          << vvc::detail::format_double(m0.devinf) << ",open_loop\n";
        for (const auto& d : designs) {
          const ClosedLoopTrace t = simulate_closed_loop(net, d.k, scen, v_ref, loop, g.pf());
          s << hour << ',' << scen.id << ',' << d.label << ','
            << vvc::detail::format_double(t.metrics.dev2) << ','
            << vvc::detail::format_double(t.metrics.devinf) << ',' << to_string(t.outcome) << '\n';
        }
      }
      session.write_text(out_path, s.str());
      return 0;
    };
  });

  auto* rtrace = rep->add_subcommand("trace", "closed-loop voltage/VAr trace CSV");
  add_sim_options(rtrace);
  rtrace->callback([&] {
    action = [&] {
      if (out_path.empty()) throw CLI::ValidationError("trace", "--out is required");
      return simulate_action();
    };
  });

  std::size_t cloud_limit = 0;
  auto* rcloud = rep->add_subcommand("cloud", "node-depth voltage cloud per scheme");
  rcloud->add_option("--feeder", feeder)->required()->check(CLI::ExistingFile);
  rcloud->add_option("--scenarios", scenarios_path)->required()->check(CLI::ExistingFile);
  rcloud->add_option("--designs", design_paths)->delimiter(',')->check(CLI::ExistingFile);
  rcloud->add_option("--limit", cloud_limit, "use only the first N scenarios (0 = all)");
  rcloud->add_option("--out", out_path)->required();
  rcloud->callback([&] {
    action = [&] {
      const NetworkModel net = load_feeder(feeder);
      ScenarioSet set = load_timeseries(scenarios_path, net);
      session.input(feeder);
      session.input(scenarios_path);
      if (cloud_limit > 0 && set.size() > cloud_limit) set.scenarios.resize(cloud_limit);
      std::vector<detail::LoadedDesign> designs;
      for (const auto& p : design_paths) {
        designs.push_back(detail::load_design(p, net));
        session.input(p);
      }
      const Eigen::VectorXd v_ref = Eigen::VectorXd::Ones(net.n());
      // rows[s][d]: final voltages of scheme d (0 = open loop) on scenario s.
      std::vector<std::vector<std::optional<Eigen::VectorXd>>> rows(
          set.size(), std::vector<std::optional<Eigen::VectorXd>>(designs.size() + 1));
      parallel_for(set.size(), g.threads, [&](std::size_t s) {
        const VoltageProfile open = solve_pf(net, open_loop_injection(set[s]), g.pf());
        if (!open.converged) return;
        rows[s][0] = open.v;
        for (std::size_t d = 0; d < designs.size(); ++d) {
          const ClosedLoopTrace t = simulate_closed_loop(net, designs[d].k, set[s], v_ref, loop, g.pf());
          if (t.outcome == LoopOutcome::converged) rows[s][d + 1] = t.v_final;
        }
      });
      std::ostringstream s;
      s << "depth,node_id,scenario_id,scheme,v_pu\n";
      for (std::size_t sc = 0; sc < set.size(); ++sc) {
        for (std::size_t d = 0; d <= designs.size(); ++d) {
          if (!rows[sc][d]) continue;
          const std::string scheme = d == 0 ? "open_loop" : designs[d - 1].label;
          for (int i = 0; i < net.n(); ++i) {
            s << net.depth(i) << ',' << net.node_id(i) << ',' << set[sc].id << ',' << scheme << ','
              << vvc::detail::format_double((*rows[sc][d])[i]) << '\n';
          }
        }
      }
      session.write_text(out_path, s.str());
      return 0;
    };
  });

  std::vector<std::string> argv_tail(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(argv_tail.begin(), argv_tail.end());
  try {
    app.parse(argv_tail);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const CLI::App* active = nullptr;
  for (const CLI::App* a = &app; a != nullptr;) {
    const auto subs = a->get_subcommands();
    if (subs.empty()) break;
    active = subs.front();
    a = active;
  }

  try {
    if (!action) throw CLI::ValidationError("vvc", "no action for the given subcommand");
    const int code = action();
    session.finish(active, g);
    return code;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace vvc::cli
