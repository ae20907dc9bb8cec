#pragma once

// Linear plant models: the data-driven linearized power flow (LPF) built from
// centered finite differences around an operating point, and the
// impedance-only LinDistFlow (LDF) model. Also model-accuracy reporting.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vvc/error.hpp"
#include "vvc/network.hpp"
#include "vvc/parallel.hpp"
#include "vvc/powerflow.hpp"
#include "vvc/scenario.hpp"

namespace vvc {

struct LinearizationConfig {
  double finite_diff_eps = 1e-6;
  PfConfig pf;
  unsigned threads = 0;
};

/// v = v_base + Jp (p - p0) + Jq (q - q0).
struct LpfModel {
  Eigen::VectorXd v_base;
  Eigen::VectorXd p0;
  Eigen::VectorXd q0;
  Eigen::MatrixXd Jp;
  Eigen::MatrixXd Jq;
  double finite_diff_eps = 1e-6;

  // Feeder metadata carried with the model so design files can be written
  // without re-reading the feeder.
  std::vector<std::string> node_ids;
  std::vector<int> generators;
  double head_voltage = 1.0;
  std::string feeder_fingerprint;

  int n() const { return static_cast<int>(v_base.size()); }

  Eigen::VectorXd evaluate(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    return v_base + Jp * (p - p0) + Jq * (q - q0);
  }
};

/// Impedance-only model v = v_flat + R p + X q, with X_ij (R_ij) the summed
/// reactance (resistance) of the branches shared by the head-to-i and
/// head-to-j paths.
struct LdfModel {
  Eigen::MatrixXd X;
  Eigen::MatrixXd R;
  Eigen::VectorXd v_flat;

  std::vector<std::string> node_ids;
  std::vector<int> generators;
  std::string feeder_fingerprint;

  int n() const { return static_cast<int>(v_flat.size()); }

  Eigen::VectorXd evaluate(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    return v_flat + R * p + X * q;
  }
};

/// Scenario-dependent constant term of the linear plant v = S q_g + v_tilde.
struct ScenarioOffset {
  Eigen::VectorXd v_tilde;
};

namespace detail {

inline void copy_metadata(const NetworkModel& net, std::vector<std::string>& ids,
                          std::vector<int>& gens, std::string& fingerprint) {
  ids.clear();
  for (int i = 0; i < net.n(); ++i) ids.push_back(net.node_id(i));
  gens = net.generators();
  fingerprint = net.fingerprint();
}

inline void require_length(const Eigen::VectorXd& v, int n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + " has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(n));
  }
}

}  // namespace detail

/// Jacobians of f_pf at (p0, q0) by centered differences. All 4n perturbed
/// solves run concurrently. Throws ConvergenceError naming the lowest failing
/// column (Jp columns 0..n-1, Jq columns n..2n-1 reported as j).
inline LpfModel build_jacobians(const NetworkModel& net, const Eigen::VectorXd& p0,
                                const Eigen::VectorXd& q0, const LinearizationConfig& cfg = {}) {
  const int n = net.n();
  detail::require_length(p0, n, "p0");
  detail::require_length(q0, n, "q0");
  if (!(cfg.finite_diff_eps > 0.0)) throw ConfigError("finite-difference eps must be positive");

  LpfModel model;
  model.p0 = p0;
  model.q0 = q0;
  model.finite_diff_eps = cfg.finite_diff_eps;
  model.head_voltage = net.head_voltage();
  detail::copy_metadata(net, model.node_ids, model.generators, model.feeder_fingerprint);

  const VoltageProfile base = solve_pf(net, {p0, q0}, cfg.pf);
  if (!base.converged) throw ConvergenceError("power flow at the operating point did not converge");
  model.v_base = base.v;

  // Task t: variable block (p or q), column j, sign (+eps or -eps).
  const std::size_t tasks = 4 * static_cast<std::size_t>(n);
  std::vector<VoltageProfile> results(tasks);
  const double eps = cfg.finite_diff_eps;
  parallel_for(tasks, cfg.threads, [&](std::size_t t) {
    const bool reactive = t >= 2 * static_cast<std::size_t>(n);
    const int j = static_cast<int>((t % (2 * n)) / 2);
    const double sign = (t % 2 == 0) ? 1.0 : -1.0;
    Injection inj{p0, q0};
    (reactive ? inj.q : inj.p)[j] += sign * eps;
    results[t] = solve_pf(net, inj, cfg.pf);
  });

  model.Jp.resize(n, n);
  model.Jq.resize(n, n);
  for (std::size_t t = 0; t < tasks; t += 2) {
    const bool reactive = t >= 2 * static_cast<std::size_t>(n);
    const int j = static_cast<int>((t % (2 * n)) / 2);
    if (!results[t].converged || !results[t + 1].converged) {
      throw ConvergenceError(std::string("perturbed power flow failed for ") +
                                 (reactive ? "Jq" : "Jp") + " column " + std::to_string(j),
                             j);
    }
    auto& J = reactive ? model.Jq : model.Jp;
    J.col(j) = (results[t].v - results[t + 1].v) / (2.0 * eps);
  }
  return model;
}

inline LpfModel build_jacobians(const NetworkModel& net, const OperatingPoint& op,
                                const LinearizationConfig& cfg = {}) {
  return build_jacobians(net, op.p0, op.q0, cfg);
}

/// v_tilde = v_base + Jp (p - p0) - Jq (q0 + q_d).
inline ScenarioOffset lpf_offset(const LpfModel& model, const Scenario& scen) {
  detail::require_length(scen.p_g, model.n(), "p_g");
  detail::require_length(scen.p_d, model.n(), "p_d");
  detail::require_length(scen.q_d, model.n(), "q_d");
  return {model.v_base + model.Jp * (scen.net_p() - model.p0) - model.Jq * (model.q0 + scen.q_d)};
}

/// v = Jq q_g + v_tilde.
inline Eigen::VectorXd lpf_predict(const LpfModel& model, const ScenarioOffset& offset,
                                   const Eigen::VectorXd& q_g) {
  detail::require_length(offset.v_tilde, model.n(), "v_tilde");
  detail::require_length(q_g, model.n(), "q_g");
  return model.Jq * q_g + offset.v_tilde;
}

inline LdfModel build_ldf(const NetworkModel& net) {
  const int n = net.n();
  LdfModel ldf;
  ldf.X = Eigen::MatrixXd::Zero(n, n);
  ldf.R = Eigen::MatrixXd::Zero(n, n);
  ldf.v_flat = Eigen::VectorXd::Constant(n, net.head_voltage());
  detail::copy_metadata(net, ldf.node_ids, ldf.generators, ldf.feeder_fingerprint);

  std::vector<char> on_path(n, 0);
  for (int i = 0; i < n; ++i) {
    const auto path_i = net.path_to_head(i);
    for (int p : path_i) on_path[p] = 1;
    for (int j = 0; j < n; ++j) {
      double x = 0.0, r = 0.0;
      for (int p : net.path_to_head(j)) {
        if (!on_path[p]) continue;
        x += net.impedance(p).imag();
        r += net.impedance(p).real();
      }
      ldf.X(i, j) = x;
      ldf.R(i, j) = r;
    }
    for (int p : path_i) on_path[p] = 0;
  }
  return ldf;
}

/// LDF counterpart of lpf_offset: v_tilde = v_flat + R p - X q_d.
inline ScenarioOffset ldf_offset(const LdfModel& ldf, const Scenario& scen) {
  detail::require_length(scen.p_d, ldf.n(), "p_d");
  return {ldf.v_flat + ldf.R * scen.net_p() - ldf.X * scen.q_d};
}

// ---------------------------------------------------------------------------
// Accuracy report

struct ErrorRow {
  std::string scenario_id;
  std::string node_id;
  std::string model;  ///< "LPF" or "LDF"
  double v_model = 0.0;
  double v_ac = 0.0;
  double error = 0.0;  ///< v_model - v_ac
};

struct Histogram {
  std::vector<double> edges;  ///< bins + 1 edges
  std::vector<std::size_t> lpf;
  std::vector<std::size_t> ldf;
};

struct ErrorReport {
  std::vector<ErrorRow> rows;
  double max_abs_lpf = 0.0;
  double max_abs_ldf = 0.0;
  std::vector<std::string> skipped;  ///< scenarios whose AC solve failed

  /// Common-edge histogram of signed errors over [-m, m], m = largest |error|.
  Histogram histogram(int bins = 40) const {
    Histogram h;
    const double m = std::max({max_abs_lpf, max_abs_ldf, 1e-12});
    for (int b = 0; b <= bins; ++b) h.edges.push_back(-m + 2.0 * m * b / bins);
    h.lpf.assign(bins, 0);
    h.ldf.assign(bins, 0);
    for (const auto& row : rows) {
      int b = static_cast<int>(std::floor((row.error + m) / (2.0 * m) * bins));
      b = std::clamp(b, 0, bins - 1);
      (row.model == "LPF" ? h.lpf : h.ldf)[b] += 1;
    }
    return h;
  }
};

inline ErrorReport model_error_report(const NetworkModel& net, const LpfModel& lpf,
                                      const LdfModel& ldf, const ScenarioSet& scenarios,
                                      const PfConfig& cfg = {}, unsigned threads = 0) {
  struct PerScenario {
    bool ok = false;
    Eigen::VectorXd v_ac, v_lpf, v_ldf;
  };
  std::vector<PerScenario> results(scenarios.size());
  parallel_for(scenarios.size(), threads, [&](std::size_t s) {
    const Scenario& scen = scenarios[s];
    const Injection inj = open_loop_injection(scen);
    const VoltageProfile ac = solve_pf(net, inj, cfg);
    if (!ac.converged) return;
    results[s] = {true, ac.v, lpf.evaluate(inj.p, inj.q), ldf.evaluate(inj.p, inj.q)};
  });

  ErrorReport report;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const auto& r = results[s];
    if (!r.ok) {
      report.skipped.push_back(scenarios[s].id);
      continue;
    }
    for (int i = 0; i < net.n(); ++i) {
      const double e_lpf = r.v_lpf[i] - r.v_ac[i];
      const double e_ldf = r.v_ldf[i] - r.v_ac[i];
      report.rows.push_back({scenarios[s].id, net.node_id(i), "LPF", r.v_lpf[i], r.v_ac[i], e_lpf});
      report.rows.push_back({scenarios[s].id, net.node_id(i), "LDF", r.v_ldf[i], r.v_ac[i], e_ldf});
      report.max_abs_lpf = std::max(report.max_abs_lpf, std::abs(e_lpf));
      report.max_abs_ldf = std::max(report.max_abs_ldf, std::abs(e_ldf));
    }
  }
  return report;
}

inline void write_error_csv(std::ostream& out, const ErrorReport& report) {
  out << "scenario_id,node_id,model,v_model,v_ac,error\n";
  for (const auto& row : report.rows) {
    out << row.scenario_id << ',' << row.node_id << ',' << row.model << ','
        << detail::format_double(row.v_model) << ',' << detail::format_double(row.v_ac) << ','
        << detail::format_double(row.error) << '\n';
  }
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_lo,bin_hi,lpf_count,ldf_count\n";
  for (std::size_t b = 0; b < h.lpf.size(); ++b) {
    out << detail::format_double(h.edges[b]) << ',' << detail::format_double(h.edges[b + 1]) << ','
        << h.lpf[b] << ',' << h.ldf[b] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Model file

namespace detail {

inline nlohmann::json to_json_vector(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json to_json_matrix(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return flat;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, int n, const char* what) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<int>(values.size()) != n) {
    throw ParseError(std::string("model file: ") + what + " has wrong length");
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(), n);
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int n, const char* what) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<int>(values.size()) != n * n) {
    throw ParseError(std::string("model file: ") + what + " has wrong size");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, n);
}

}  // namespace detail

/// Model file: both Jacobians row-major, plus the LDF matrices so designs
/// against either plant need only this file.
inline nlohmann::json model_to_json(const LpfModel& lpf, const LdfModel& ldf) {
  nlohmann::json doc;
  doc["format"] = "vvc-model";
  doc["version"] = 1;
  doc["feeder_fingerprint"] = lpf.feeder_fingerprint;
  doc["n"] = lpf.n();
  doc["node_ids"] = lpf.node_ids;
  std::vector<std::string> gen_ids;
  for (int g : lpf.generators) gen_ids.push_back(lpf.node_ids.at(g));
  doc["generators"] = gen_ids;
  doc["head_voltage"] = lpf.head_voltage;
  doc["finite_diff_eps"] = lpf.finite_diff_eps;
  doc["v_base"] = detail::to_json_vector(lpf.v_base);
  doc["p0"] = detail::to_json_vector(lpf.p0);
  doc["q0"] = detail::to_json_vector(lpf.q0);
  doc["Jp"] = detail::to_json_matrix(lpf.Jp);
  doc["Jq"] = detail::to_json_matrix(lpf.Jq);
  doc["ldf"] = {{"X", detail::to_json_matrix(ldf.X)},
                {"R", detail::to_json_matrix(ldf.R)},
                {"v_flat", detail::to_json_vector(ldf.v_flat)}};
  return doc;
}

struct ModelBundle {
  LpfModel lpf;
  LdfModel ldf;
};

inline ModelBundle model_from_json(const nlohmann::json& doc) {
  ModelBundle out;
  try {
    if (doc.value("format", std::string()) != "vvc-model") {
      throw ParseError("not a vvc model file");
    }
    const int n = doc.at("n").get<int>();
    auto& lpf = out.lpf;
    lpf.feeder_fingerprint = doc.at("feeder_fingerprint").get<std::string>();
    lpf.node_ids = doc.at("node_ids").get<std::vector<std::string>>();
    if (static_cast<int>(lpf.node_ids.size()) != n) throw ParseError("model file: node_ids length");
    for (const auto& id : doc.at("generators").get<std::vector<std::string>>()) {
      const auto it = std::find(lpf.node_ids.begin(), lpf.node_ids.end(), id);
      if (it == lpf.node_ids.end()) throw ParseError("model file: unknown generator " + id);
      lpf.generators.push_back(static_cast<int>(it - lpf.node_ids.begin()));
    }
    std::sort(lpf.generators.begin(), lpf.generators.end());
    lpf.head_voltage = doc.at("head_voltage").get<double>();
    lpf.finite_diff_eps = doc.at("finite_diff_eps").get<double>();
    lpf.v_base = detail::vector_from_json(doc.at("v_base"), n, "v_base");
    lpf.p0 = detail::vector_from_json(doc.at("p0"), n, "p0");
    lpf.q0 = detail::vector_from_json(doc.at("q0"), n, "q0");
    lpf.Jp = detail::matrix_from_json(doc.at("Jp"), n, "Jp");
    lpf.Jq = detail::matrix_from_json(doc.at("Jq"), n, "Jq");

    auto& ldf = out.ldf;
    ldf.node_ids = lpf.node_ids;
    ldf.generators = lpf.generators;
    ldf.feeder_fingerprint = lpf.feeder_fingerprint;
    const auto& l = doc.at("ldf");
    ldf.X = detail::matrix_from_json(l.at("X"), n, "ldf.X");
    ldf.R = detail::matrix_from_json(l.at("R"), n, "ldf.R");
    ldf.v_flat = detail::vector_from_json(l.at("v_flat"), n, "ldf.v_flat");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  return out;
}

inline void save_model(const std::string& path, const LpfModel& lpf, const LdfModel& ldf) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << model_to_json(lpf, ldf).dump(1) << '\n';
}

inline ModelBundle load_model(const std::string& path) {
  try {
    return model_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace vvc
