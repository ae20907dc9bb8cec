#pragma once

// Loading scenarios: time-series ingestion, train/test split, operating
// point, worst-case and exemplary-hour selection, and a synthetic-year
// generator for bundled feeders.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vvc/error.hpp"
#include "vvc/network.hpp"
#include "vvc/parallel.hpp"
#include "vvc/powerflow.hpp"

namespace vvc {

/// One loading condition. q_g is not part of a scenario: it is the controlled
/// variable.
struct Scenario {
  std::string id;
  Eigen::VectorXd p_g;
  Eigen::VectorXd p_d;
  Eigen::VectorXd q_d;

  Eigen::VectorXd net_p() const { return p_g - p_d; }

  static Scenario zeros(std::string id, int n) {
    return {std::move(id), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
            Eigen::VectorXd::Zero(n)};
  }
};

struct ScenarioSet {
  std::vector<Scenario> scenarios;
  std::string feeder_fingerprint;

  std::size_t size() const { return scenarios.size(); }
  bool empty() const { return scenarios.empty(); }
  const Scenario& operator[](std::size_t i) const { return scenarios[i]; }
};

/// Injection with the given inverter reactive power (q = q_g - q_d).
inline Injection scenario_injection(const Scenario& scen, const Eigen::VectorXd& q_g) {
  return {scen.net_p(), q_g - scen.q_d};
}

/// Injection before any control action (q_g = 0).
inline Injection open_loop_injection(const Scenario& scen) {
  return {scen.net_p(), -scen.q_d};
}

inline void check_scenario(const NetworkModel& net, const Scenario& scen) {
  const int n = net.n();
  if (scen.p_g.size() != n || scen.p_d.size() != n || scen.q_d.size() != n) {
    throw DimensionError("scenario " + scen.id + " vectors do not have length " +
                         std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (scen.p_d[i] < 0.0 || scen.q_d[i] < 0.0) {
      throw DataError("negative demand at node " + net.node_id(i) + " in scenario " + scen.id);
    }
    if (scen.p_g[i] < 0.0) {
      throw DataError("negative generation at node " + net.node_id(i) + " in scenario " + scen.id);
    }
    if (scen.p_g[i] != 0.0 && net.node_at(i).role != NodeRole::generator) {
      throw DataError("generation at non-generator node " + net.node_id(i) + " in scenario " +
                      scen.id);
    }
  }
}

// ---------------------------------------------------------------------------
// Scenario CSV (long format): timestamp,node_id,p_d_kw,q_d_kvar,p_g_kw

inline constexpr const char* kScenarioCsvHeader = "timestamp,node_id,p_d_kw,q_d_kvar,p_g_kw";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline double parse_number(const std::string& text, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + text + "'");
  }
}

inline std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace detail

inline ScenarioSet parse_timeseries(std::istream& in, const NetworkModel& net) {
  ScenarioSet set;
  set.feeder_fingerprint = net.fingerprint();
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("scenario CSV is empty (missing header)");
  ++line_no;
  if (detail::trim(line) != kScenarioCsvHeader) {
    throw ParseError("unexpected scenario CSV header: '" + line + "'");
  }
  const double kw_to_pu = 1.0 / (1000.0 * net.base_mva());
  std::unordered_map<std::string, std::size_t> by_id;
  std::vector<std::vector<bool>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 5) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields");
    }
    const std::string& stamp = fields[0];
    const auto pos = net.position_of(fields[1]);
    if (!pos) throw DataError("line " + std::to_string(line_no) + ": unknown node id " + fields[1]);
    const double p_d = detail::parse_number(fields[2], line_no) * kw_to_pu;
    const double q_d = detail::parse_number(fields[3], line_no) * kw_to_pu;
    const double p_g = detail::parse_number(fields[4], line_no) * kw_to_pu;
    if (p_d < 0.0 || q_d < 0.0) {
      throw DataError("line " + std::to_string(line_no) + ": negative demand");
    }
    if (p_g < 0.0) throw DataError("line " + std::to_string(line_no) + ": negative generation");
    if (p_g != 0.0 && net.node_at(*pos).role != NodeRole::generator) {
      throw DataError("line " + std::to_string(line_no) + ": generation at non-generator node " +
                      fields[1]);
    }
    auto [it, inserted] = by_id.emplace(stamp, set.scenarios.size());
    if (inserted) {
      set.scenarios.push_back(Scenario::zeros(stamp, net.n()));
      seen.emplace_back(net.n(), false);
    }
    if (seen[it->second][*pos]) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate row for " + stamp + "/" +
                      fields[1]);
    }
    seen[it->second][*pos] = true;
    Scenario& scen = set.scenarios[it->second];
    scen.p_d[*pos] = p_d;
    scen.q_d[*pos] = q_d;
    scen.p_g[*pos] = p_g;
  }
  return set;
}

inline ScenarioSet load_timeseries(const std::string& path, const NetworkModel& net) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  return parse_timeseries(in, net);
}

inline void write_timeseries(std::ostream& out, const ScenarioSet& set, const NetworkModel& net) {
  const double pu_to_kw = 1000.0 * net.base_mva();
  out << kScenarioCsvHeader << '\n';
  for (const auto& scen : set.scenarios) {
    for (int i = 0; i < net.n(); ++i) {
      if (scen.p_d[i] == 0.0 && scen.q_d[i] == 0.0 && scen.p_g[i] == 0.0) continue;
      out << scen.id << ',' << net.node_id(i) << ',' << detail::format_double(scen.p_d[i] * pu_to_kw)
          << ',' << detail::format_double(scen.q_d[i] * pu_to_kw) << ','
          << detail::format_double(scen.p_g[i] * pu_to_kw) << '\n';
    }
  }
}

inline void save_timeseries(const std::string& path, const ScenarioSet& set,
                            const NetworkModel& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_timeseries(out, set, net);
}

// ---------------------------------------------------------------------------
// Split and operating point

struct SplitResult {
  ScenarioSet train;
  ScenarioSet test;
  std::uint64_t seed = 0;
  double fraction = 0.9;
};

/// Seeded shuffle then partition; floor(fraction * N) scenarios go to train.
/// Both halves keep the input's relative order.
inline SplitResult split_train_test(const ScenarioSet& set, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1)");
  }
  const std::size_t total = set.size();
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
  std::vector<std::size_t> train_idx(perm.begin(), perm.begin() + n_train);
  std::vector<std::size_t> test_idx(perm.begin() + n_train, perm.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  SplitResult out;
  out.seed = seed;
  out.fraction = fraction;
  out.train.feeder_fingerprint = out.test.feeder_fingerprint = set.feeder_fingerprint;
  for (auto i : train_idx) out.train.scenarios.push_back(set.scenarios[i]);
  for (auto i : test_idx) out.test.scenarios.push_back(set.scenarios[i]);
  return out;
}

struct OperatingPoint {
  Eigen::VectorXd p0;
  Eigen::VectorXd q0;
};

/// Elementwise mean of p_g, p_d and q_d over the set.
inline Scenario mean_scenario(const ScenarioSet& set, std::string id = "mean") {
  if (set.empty()) throw DataError("cannot average an empty scenario set");
  const auto n = set[0].p_d.size();
  Scenario mean = Scenario::zeros(std::move(id), static_cast<int>(n));
  for (const auto& s : set.scenarios) {
    mean.p_g += s.p_g;
    mean.p_d += s.p_d;
    mean.q_d += s.q_d;
  }
  const double count = static_cast<double>(set.size());
  mean.p_g /= count;
  mean.p_d /= count;
  mean.q_d /= count;
  return mean;
}

/// p0 = mean net active injection; q0 = mean net reactive injection with no
/// controlled VArs, i.e. -mean(q_d).
inline OperatingPoint average_operating_point(const ScenarioSet& train) {
  if (train.empty()) throw DataError("operating point needs a nonempty training set");
  const auto n = train[0].p_d.size();
  OperatingPoint op{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (const auto& s : train.scenarios) {
    op.p0 += s.p_g - s.p_d;
    op.q0 -= s.q_d;
  }
  op.p0 /= static_cast<double>(train.size());
  op.q0 /= static_cast<double>(train.size());
  return op;
}

/// `count` scenarios with every p_g, p_d, q_d entry of `base` scaled by an
/// independent factor drawn uniformly from [1 - spread, 1 + spread].
inline ScenarioSet perturbed_scenarios(const Scenario& base, double spread, std::size_t count,
                                       std::uint64_t seed, const std::string& prefix = "rand") {
  if (!(spread >= 0.0 && spread < 1.0)) throw ConfigError("spread must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> factor(1.0 - spread, 1.0 + spread);
  ScenarioSet out;
  const auto n = base.p_d.size();
  for (std::size_t s = 0; s < count; ++s) {
    Scenario scen = base;
    scen.id = prefix + std::to_string(s);
    for (Eigen::Index i = 0; i < n; ++i) {
      scen.p_g[i] *= factor(rng);
      scen.p_d[i] *= factor(rng);
      scen.q_d[i] *= factor(rng);
    }
    out.scenarios.push_back(std::move(scen));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Open-loop scans

struct OpenLoopStats {
  bool converged = false;
  double dev2 = 0.0;  ///< ||v - 1||_2
  double v_min = 0.0;
  double v_max = 0.0;
  Eigen::VectorXd v;
};

inline std::vector<OpenLoopStats> open_loop_scan(const ScenarioSet& set, const NetworkModel& net,
                                                 const PfConfig& cfg = {}, unsigned threads = 0) {
  std::vector<OpenLoopStats> stats(set.size());
  parallel_for(set.size(), threads, [&](std::size_t i) {
    const VoltageProfile prof = solve_pf(net, open_loop_injection(set[i]), cfg);
    OpenLoopStats& st = stats[i];
    st.converged = prof.converged;
    if (!prof.converged) return;
    st.v = prof.v;
    st.dev2 = (prof.v.array() - 1.0).matrix().norm();
    st.v_min = prof.v.minCoeff();
    st.v_max = prof.v.maxCoeff();
  });
  return stats;
}

namespace detail {

/// Index of the best scenario under `better(a, b)`; ties go to the smallest id.
template <class Key>
std::size_t select_by(const ScenarioSet& set, const std::vector<bool>& usable, Key key) {
  std::size_t best = set.size();
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!usable[i]) continue;
    if (best == set.size()) {
      best = i;
      continue;
    }
    const double a = key(i), b = key(best);
    if (a > b || (a == b && set[i].id < set[best].id)) best = i;
  }
  if (best == set.size()) throw DataError("no usable scenario (all power flows failed)");
  return best;
}

}  // namespace detail

/// Index of the training scenario with the largest open-loop ||v - 1||_2.
/// Scenarios whose power flow fails are skipped.
inline std::size_t select_worst_case_index(const ScenarioSet& train, const NetworkModel& net,
                                           const PfConfig& cfg = {}, unsigned threads = 0) {
  const auto stats = open_loop_scan(train, net, cfg, threads);
  std::vector<bool> usable(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) usable[i] = stats[i].converged;
  return detail::select_by(train, usable, [&](std::size_t i) { return stats[i].dev2; });
}

inline Scenario select_worst_case(const ScenarioSet& train, const NetworkModel& net,
                                  const PfConfig& cfg = {}, unsigned threads = 0) {
  return train[select_worst_case_index(train, net, cfg, threads)];
}

struct ExemplaryHours {
  std::size_t a = 0;  ///< max total demand
  std::size_t b = 0;  ///< max total generation
  std::size_t c = 0;  ///< min single-node voltage
  std::size_t d = 0;  ///< max single-node voltage
};

inline ExemplaryHours select_exemplary_hours(const ScenarioSet& test, const NetworkModel& net,
                                             const PfConfig& cfg = {}, unsigned threads = 0) {
  const auto stats = open_loop_scan(test, net, cfg, threads);
  std::vector<bool> usable(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) usable[i] = stats[i].converged;
  ExemplaryHours h;
  h.a = detail::select_by(test, usable, [&](std::size_t i) { return test[i].p_d.sum(); });
  h.b = detail::select_by(test, usable, [&](std::size_t i) { return test[i].p_g.sum(); });
  h.c = detail::select_by(test, usable, [&](std::size_t i) { return -stats[i].v_min; });
  h.d = detail::select_by(test, usable, [&](std::size_t i) { return stats[i].v_max; });
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic year

struct SynthConfig {
  /// Per-position peak demand (kW, kvar) and PV capacity (kW).
  std::vector<double> peak_kw;
  std::vector<double> peak_kvar;
  std::vector<double> pv_kw;
  double mean_load_fraction = 0.6;  ///< yearly mean of demand / peak
  double noise = 0.05;              ///< relative std. dev. of hourly noise
  int hours = 8760;
};

inline void validate(const SynthConfig& cfg, const NetworkModel& net) {
  const auto n = static_cast<std::size_t>(net.n());
  if (cfg.peak_kw.size() != n || cfg.peak_kvar.size() != n || cfg.pv_kw.size() != n) {
    throw ConfigError("synthetic config vectors must have one entry per node");
  }
  if (!(cfg.mean_load_fraction > 0.0 && cfg.mean_load_fraction <= 1.0)) {
    throw ConfigError("mean_load_fraction must lie in (0, 1]");
  }
  if (!(cfg.noise >= 0.0 && cfg.noise < 0.5)) throw ConfigError("noise must lie in [0, 0.5)");
  if (cfg.hours <= 0 || cfg.hours % 24 != 0) throw ConfigError("hours must be a multiple of 24");
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.peak_kw[i] < 0.0 || cfg.peak_kvar[i] < 0.0 || cfg.pv_kw[i] < 0.0) {
      throw ConfigError("negative capacity at node " + net.node_id(static_cast<int>(i)));
    }
    if (cfg.pv_kw[i] > 0.0 && net.node_at(static_cast<int>(i)).role != NodeRole::generator) {
      throw ConfigError("PV capacity at non-generator node " + net.node_id(static_cast<int>(i)));
    }
  }
}

/// Reads {"noise", "mean_load_fraction", "hours", "loads": {id: {"peak_kw",
/// "peak_kvar"}}, "pv_kw": {id: kw}}. Nodes not listed get zero.
inline SynthConfig parse_synth_config(const nlohmann::json& doc, const NetworkModel& net) {
  SynthConfig cfg;
  const auto n = static_cast<std::size_t>(net.n());
  cfg.peak_kw.assign(n, 0.0);
  cfg.peak_kvar.assign(n, 0.0);
  cfg.pv_kw.assign(n, 0.0);
  try {
    cfg.noise = doc.value("noise", cfg.noise);
    cfg.mean_load_fraction = doc.value("mean_load_fraction", cfg.mean_load_fraction);
    cfg.hours = doc.value("hours", cfg.hours);
    const double load_scale = doc.value("load_scale", 1.0);
    const double pv_scale = doc.value("pv_scale", 1.0);
    auto position = [&](const std::string& id) {
      const auto pos = net.position_of(id);
      if (!pos) throw ConfigError("synthetic config references unknown node " + id);
      return static_cast<std::size_t>(*pos);
    };
    if (doc.contains("loads")) {
      for (const auto& [id, item] : doc.at("loads").items()) {
        const auto i = position(id);
        cfg.peak_kw[i] = load_scale * item.at("peak_kw").get<double>();
        cfg.peak_kvar[i] = load_scale * item.value("peak_kvar", 0.0);
      }
    }
    if (doc.contains("pv_kw")) {
      for (const auto& [id, kw] : doc.at("pv_kw").items()) {
        cfg.pv_kw[position(id)] = pv_scale * kw.get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synthetic config: ") + e.what());
  }
  validate(cfg, net);
  return cfg;
}

namespace detail {

/// "YYYY-MM-DDTHH:00" for hour-of-year `hour` in a non-leap year.
inline std::string hour_stamp(int year, int hour) {
  static constexpr std::array<int, 12> kDays{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int day = hour / 24;
  int month = 0;
  while (month < 11 && day >= kDays[month]) day -= kDays[month++];
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:00", year, month + 1, day + 1, hour % 24);
  return buf;
}

// Residential demand relative to its daily mean, hour 0..23.
inline constexpr std::array<double, 24> kDailyLoadShape{
    0.62, 0.56, 0.53, 0.52, 0.54, 0.63, 0.82, 1.00, 1.05, 0.98, 0.94, 0.93,
    0.92, 0.90, 0.91, 0.97, 1.10, 1.32, 1.48, 1.50, 1.42, 1.26, 1.01, 0.78};

}  // namespace detail

/// Hourly scenarios built from a daily load shape with winter/summer peaks and
/// a seasonal solar bell curve, plus seeded multiplicative noise.
inline ScenarioSet synthesize_year(const NetworkModel& net, const SynthConfig& cfg,
                                   std::uint64_t seed, int year = 2023) {
  validate(cfg, net);
  constexpr double kPi = 3.14159265358979323846;
  const int n = net.n();
  const int days = cfg.hours / 24;

  // Seasonal multiplier: winter and summer peaks, shoulder-season trough.
  auto seasonal = [&](int day) {
    const double phase = 2.0 * kPi * day / 365.0;
    return 1.0 + 0.18 * std::cos(phase) + 0.10 * std::cos(2.0 * phase);
  };
  double shape_mean = 0.0;
  for (int d = 0; d < days; ++d) {
    for (int h = 0; h < 24; ++h) shape_mean += seasonal(d) * detail::kDailyLoadShape[h];
  }
  shape_mean /= cfg.hours;
  const double load_gain = cfg.mean_load_fraction / shape_mean;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> cloud(0.35, 1.0);

  ScenarioSet out;
  out.feeder_fingerprint = net.fingerprint();
  out.scenarios.reserve(cfg.hours);
  const double kw_to_pu = 1.0 / (1000.0 * net.base_mva());
  for (int d = 0; d < days; ++d) {
    const double daylight = 12.0 + 3.0 * std::sin(2.0 * kPi * (d - 80) / 365.0);
    const double sunrise = 12.5 - daylight / 2.0;
    const double clearness = cfg.noise > 0.0 ? cloud(rng) : 1.0;
    for (int h = 0; h < 24; ++h) {
      Scenario scen = Scenario::zeros(detail::hour_stamp(year, d * 24 + h), n);
      const double base = load_gain * seasonal(d) * detail::kDailyLoadShape[h];
      const double solar_arg = (h + 0.5 - sunrise) / daylight;
      const double solar =
          (solar_arg > 0.0 && solar_arg < 1.0) ? std::pow(std::sin(kPi * solar_arg), 1.5) : 0.0;
      for (int i = 0; i < n; ++i) {
        if (cfg.peak_kw[i] > 0.0 || cfg.peak_kvar[i] > 0.0) {
          const double factor = std::max(0.0, base * (1.0 + cfg.noise * gauss(rng)));
          scen.p_d[i] = cfg.peak_kw[i] * factor * kw_to_pu;
          scen.q_d[i] = cfg.peak_kvar[i] * factor * kw_to_pu;
        }
        if (cfg.pv_kw[i] > 0.0 && solar > 0.0) {
          const double factor = std::max(0.0, solar * clearness * (1.0 + cfg.noise * gauss(rng)));
          scen.p_g[i] = cfg.pv_kw[i] * factor * kw_to_pu;
        }
      }
      out.scenarios.push_back(std::move(scen));
    }
  }
  return out;
}

}  // namespace vvc
