#pragma once

// Closed-loop simulation of decentralized VVC against a voltage plant: the
// nonlinear power flow (validation) or the LPF model (linear consistency).
// One step is one VVC update followed by one plant solve.

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vvc/error.hpp"
#include "vvc/linmodels.hpp"
#include "vvc/network.hpp"
#include "vvc/powerflow.hpp"
#include "vvc/scenario.hpp"
#include "vvc/stability.hpp"

namespace vvc {

enum class LoopMode { nonincremental, incremental };
enum class LoopOutcome { converged, diverged, max_steps };

inline std::string_view to_string(LoopMode m) {
  return m == LoopMode::incremental ? "incremental" : "nonincremental";
}

inline LoopMode parse_loop_mode(std::string_view text) {
  if (text == "nonincremental") return LoopMode::nonincremental;
  if (text == "incremental") return LoopMode::incremental;
  throw ConfigError("unknown loop mode: " + std::string(text));
}

inline std::string_view to_string(LoopOutcome o) {
  switch (o) {
    case LoopOutcome::converged: return "converged";
    case LoopOutcome::diverged: return "diverged";
    case LoopOutcome::max_steps: return "max_steps";
  }
  return "max_steps";
}

struct LoopConfig {
  LoopMode mode = LoopMode::nonincremental;
  double dt_over_tau = 1.0;
  double conv_tol = 1e-4;             ///< step-to-step max |dv|, p.u.
  int max_steps = 2000;
  double divergence_v_limit = 0.5;    ///< max |v - v_r| before declaring divergence
  int record_every = 1;               ///< history down-sampling; final state always kept

  static LoopConfig incremental(double dt_over_tau) {
    LoopConfig cfg;
    cfg.mode = LoopMode::incremental;
    cfg.dt_over_tau = dt_over_tau;
    return cfg;
  }

  void validate() const {
    if (!(dt_over_tau > 0.0 && dt_over_tau <= 1.0)) throw ConfigError("dt_over_tau must lie in (0, 1]");
    if (mode == LoopMode::nonincremental && dt_over_tau != 1.0) {
      throw ConfigError("nonincremental mode requires dt_over_tau = 1");
    }
    if (!(conv_tol > 0.0)) throw ConfigError("conv_tol must be positive");
    if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
    if (!(divergence_v_limit > 0.0)) throw ConfigError("divergence_v_limit must be positive");
    if (record_every < 1) throw ConfigError("record_every must be at least 1");
  }
};

struct DeviationMetrics {
  double dev2 = 0.0;    ///< ||v - v_r||_2
  double devinf = 0.0;  ///< ||v - v_r||_inf
};

inline DeviationMetrics deviation_metrics(const Eigen::VectorXd& v, const Eigen::VectorXd& v_ref) {
  if (v.size() != v_ref.size()) throw DimensionError("deviation_metrics: length mismatch");
  const Eigen::VectorXd d = v - v_ref;
  return {d.norm(), d.size() ? d.lpNorm<Eigen::Infinity>() : 0.0};
}

/// q_g = K (v - v_r).
inline Eigen::VectorXd vvc_response(const GainVector& k, const Eigen::VectorXd& v,
                                    const Eigen::VectorXd& v_ref) {
  if (v.size() != k.k.size() || v_ref.size() != k.k.size()) {
    throw DimensionError("vvc_response: length mismatch");
  }
  return k.k.cwiseProduct(v - v_ref);
}

/// First-order filtered response q = (1 - a) q_prev + a K (v - v_r), a = dT/tau.
inline Eigen::VectorXd incremental_response(const GainVector& k, const Eigen::VectorXd& v,
                                            const Eigen::VectorXd& v_ref,
                                            const Eigen::VectorXd& q_prev, double dt_over_tau) {
  if (!(dt_over_tau > 0.0 && dt_over_tau <= 1.0)) throw ConfigError("dt_over_tau must lie in (0, 1]");
  if (q_prev.size() != k.k.size()) throw DimensionError("incremental_response: length mismatch");
  if (dt_over_tau == 1.0) return vvc_response(k, v, v_ref);
  return (1.0 - dt_over_tau) * q_prev + dt_over_tau * vvc_response(k, v, v_ref);
}

struct ClosedLoopTrace {
  std::vector<int> steps_recorded;
  std::vector<Eigen::VectorXd> v_history;
  std::vector<Eigen::VectorXd> q_history;
  LoopOutcome outcome = LoopOutcome::max_steps;
  int steps = 0;
  Eigen::VectorXd v_final;
  Eigen::VectorXd q_final;
  DeviationMetrics metrics;
  std::string reason;
};

/// Runs the loop against `plant`, a callable mapping q_g to
/// std::optional<Eigen::VectorXd> voltages (nullopt = plant failure).
/// Step 0 records the open-loop state v0 with q_g = 0.
template <class Plant>
ClosedLoopTrace run_closed_loop(Plant&& plant, const Eigen::VectorXd& v0, const GainVector& k,
                                const Eigen::VectorXd& v_ref, const LoopConfig& cfg) {
  cfg.validate();
  const auto n = v0.size();
  if (k.k.size() != n || v_ref.size() != n) throw DimensionError("closed loop: length mismatch");

  ClosedLoopTrace trace;
  Eigen::VectorXd v_prev = v0;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  auto record = [&](int step, const Eigen::VectorXd& v, const Eigen::VectorXd& qg) {
    trace.steps_recorded.push_back(step);
    trace.v_history.push_back(v);
    trace.q_history.push_back(qg);
  };
  record(0, v_prev, q);

  int step = 1;
  for (; step <= cfg.max_steps; ++step) {
    q = cfg.mode == LoopMode::nonincremental ? vvc_response(k, v_prev, v_ref)
                                             : incremental_response(k, v_prev, v_ref, q, cfg.dt_over_tau);
    const std::optional<Eigen::VectorXd> v = plant(q);
    if (!v) {
      trace.outcome = LoopOutcome::diverged;
      trace.reason = "plant solve failed";
      trace.v_final = v_prev;
      break;
    }
    const bool last = (step % cfg.record_every == 0);
    const double excursion = (*v - v_ref).cwiseAbs().maxCoeff();
    if (!std::isfinite(excursion) || excursion > cfg.divergence_v_limit) {
      trace.outcome = LoopOutcome::diverged;
      trace.reason = "voltage excursion beyond limit";
      trace.v_final = *v;
      record(step, *v, q);
      break;
    }
    const double change = (*v - v_prev).cwiseAbs().maxCoeff();
    if (change <= cfg.conv_tol) {
      trace.outcome = LoopOutcome::converged;
      trace.v_final = *v;
      record(step, *v, q);
      break;
    }
    if (last) record(step, *v, q);
    v_prev = *v;
  }
  if (step > cfg.max_steps) {
    step = cfg.max_steps;
    trace.outcome = LoopOutcome::max_steps;
    trace.v_final = v_prev;
    if (trace.steps_recorded.back() != step) record(step, v_prev, q);
  }
  trace.steps = step;
  trace.q_final = q;
  trace.metrics = deviation_metrics(trace.v_final, v_ref);
  return trace;
}

/// Closed loop against the nonlinear AC power flow. Throws ConvergenceError if
/// the open-loop (q_g = 0) solve fails.
inline ClosedLoopTrace simulate_closed_loop(const NetworkModel& net, const GainVector& k,
                                            const Scenario& scen, const Eigen::VectorXd& v_ref,
                                            const LoopConfig& cfg, const PfConfig& pf = {}) {
  check_scenario(net, scen);
  const VoltageProfile open = solve_pf(net, open_loop_injection(scen), pf);
  if (!open.converged) {
    throw ConvergenceError("open-loop power flow failed for scenario " + scen.id);
  }
  auto plant = [&](const Eigen::VectorXd& q_g) -> std::optional<Eigen::VectorXd> {
    const Injection inj = scenario_injection(scen, q_g);
    if (!injection_plausible(inj)) return std::nullopt;
    VoltageProfile prof = solve_pf(net, inj, pf);
    if (!prof.converged) return std::nullopt;
    return std::move(prof.v);
  };
  return run_closed_loop(plant, open.v, k, v_ref, cfg);
}

/// Closed loop with the LPF plant v = Jq q_g + v_tilde.
inline ClosedLoopTrace simulate_linear_loop(const LpfModel& model, const ScenarioOffset& offset,
                                            const GainVector& k, const Eigen::VectorXd& v_ref,
                                            const LoopConfig& cfg) {
  auto plant = [&](const Eigen::VectorXd& q_g) -> std::optional<Eigen::VectorXd> {
    return lpf_predict(model, offset, q_g);
  };
  return run_closed_loop(plant, offset.v_tilde, k, v_ref, cfg);
}

/// True if the last `window` recorded voltage increments at `pos` alternate in
/// sign (oscillatory instability).
inline bool has_alternating_increments(const ClosedLoopTrace& trace, int pos, int window = 6) {
  const auto& h = trace.v_history;
  if (static_cast<int>(h.size()) < window + 2) return false;
  const std::size_t end = h.size();
  for (std::size_t t = end - static_cast<std::size_t>(window); t < end; ++t) {
    const double d1 = h[t][pos] - h[t - 1][pos];
    const double d0 = h[t - 1][pos] - h[t - 2][pos];
    if (!(d1 * d0 < 0.0)) return false;
  }
  return true;
}

inline void write_trace_csv(std::ostream& out, const ClosedLoopTrace& trace,
                            const std::vector<std::string>& node_ids) {
  out << "step,node_id,v_pu,qg_pu\n";
  for (std::size_t r = 0; r < trace.v_history.size(); ++r) {
    for (std::size_t i = 0; i < node_ids.size(); ++i) {
      out << trace.steps_recorded[r] << ',' << node_ids[i] << ','
          << detail::format_double(trace.v_history[r][static_cast<Eigen::Index>(i)]) << ','
          << detail::format_double(trace.q_history[r][static_cast<Eigen::Index>(i)]) << '\n';
    }
  }
}

inline nlohmann::json trace_summary_json(const ClosedLoopTrace& trace) {
  return {{"outcome", std::string(to_string(trace.outcome))},
          {"steps", trace.steps},
          {"dev2", trace.metrics.dev2},
          {"devinf", trace.metrics.devinf},
          {"reason", trace.reason}};
}

}  // namespace vvc
