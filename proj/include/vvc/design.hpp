#pragma once

// Optimal VVC slope design:
//
//   min_k  ||v* - v_r||^2 + (beta / n_g) ||k||^2
//   s.t.   criterion(S K) <= 1 - epsilon
//          k_i <= 0 on generators, k_i = 0 elsewhere
//          v* = (I - S K)^{-1} (v_tilde - S K v_r)   (substituted)
//
// Solved by a log-barrier method on the stability constraint(s) with a
// projected quasi-Newton inner solver that keeps k_g <= 0 exactly, restarted
// from several initial points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vvc/error.hpp"
#include "vvc/linmodels.hpp"
#include "vvc/parallel.hpp"
#include "vvc/stability.hpp"

namespace vvc {

inline constexpr double kDefaultBeta = 0.06;

struct DesignProblem {
  Eigen::MatrixXd sensitivity;  ///< Jq (LPF) or X (LDF), n x n
  std::vector<int> generators;  ///< ascending positions
  Eigen::VectorXd v_tilde;
  Eigen::VectorXd v_ref;
  double beta = kDefaultBeta;
  double epsilon = kDefaultStabilityEpsilon;
  Criterion criterion = Criterion::rho;
  int multistart = 8;
  std::uint64_t seed = 42;
  unsigned threads = 0;

  int n() const { return static_cast<int>(v_tilde.size()); }
  int n_g() const { return static_cast<int>(generators.size()); }

  void validate() const {
    const auto n = v_tilde.size();
    if (sensitivity.rows() != n || sensitivity.cols() != n || v_ref.size() != n) {
      throw DimensionError("design problem dimensions are inconsistent");
    }
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (multistart < 1) throw ConfigError("multistart must be at least 1");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(v_ref[i] >= 0.9 && v_ref[i] <= 1.1)) {
        throw ConfigError("reference voltages must lie in [0.9, 1.1]");
      }
    }
    for (std::size_t i = 0; i < generators.size(); ++i) {
      if (generators[i] < 0 || generators[i] >= n ||
          (i > 0 && generators[i] <= generators[i - 1])) {
        throw ConfigError("generator positions must be ascending and within range");
      }
    }
  }
};

inline DesignProblem make_problem(const LpfModel& model, const ScenarioOffset& offset,
                                  const Eigen::VectorXd& v_ref) {
  DesignProblem p;
  p.sensitivity = model.Jq;
  p.generators = model.generators;
  p.v_tilde = offset.v_tilde;
  p.v_ref = v_ref;
  return p;
}

inline DesignProblem make_problem(const LdfModel& model, const ScenarioOffset& offset,
                                  const Eigen::VectorXd& v_ref) {
  DesignProblem p;
  p.sensitivity = model.X;
  p.generators = model.generators;
  p.v_tilde = offset.v_tilde;
  p.v_ref = v_ref;
  return p;
}

/// v* = (I - S K)^{-1}(v_tilde - S K v_r), computed as v_r + d with
/// (I - S K) d = v_tilde - v_r. Throws NumericalError when I - S K is singular.
inline Eigen::VectorXd equilibrium_voltage(const Eigen::MatrixXd& S, const GainVector& k,
                                           const Eigen::VectorXd& v_tilde,
                                           const Eigen::VectorXd& v_ref) {
  const auto n = S.rows();
  if (S.cols() != n || k.k.size() != n || v_tilde.size() != n || v_ref.size() != n) {
    throw DimensionError("equilibrium_voltage: inconsistent dimensions");
  }
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - S * k.k.asDiagonal();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  if (!(lu.rcond() > 1e-13)) throw NumericalError("I - S K is singular; no equilibrium");
  return v_ref + lu.solve(v_tilde - v_ref);
}

struct ObjectiveTerms {
  double deviation = 0.0;       ///< ||v* - v_r||^2
  double regularization = 0.0;  ///< (beta / n_g) ||k||^2
  double total = 0.0;
};

inline ObjectiveTerms design_objective(const GainVector& k, const DesignProblem& problem) {
  const Eigen::VectorXd v_star =
      equilibrium_voltage(problem.sensitivity, k, problem.v_tilde, problem.v_ref);
  ObjectiveTerms t;
  t.deviation = (v_star - problem.v_ref).squaredNorm();
  t.regularization =
      problem.n_g() > 0 ? problem.beta / problem.n_g() * k.k.squaredNorm() : 0.0;
  t.total = t.deviation + t.regularization;
  return t;
}

struct StartOutcome {
  int index = 0;
  Eigen::VectorXd k_start;  ///< generator slopes
  Eigen::VectorXd k_final;
  double objective = std::numeric_limits<double>::infinity();
  bool feasible = false;
  int iterations = 0;
};

struct DesignResult {
  GainVector k;
  double objective = 0.0;
  double deviation_term = 0.0;
  double regularization_term = 0.0;
  StabilityVerdict verdict;
  int starts_tried = 0;
  int best_start_index = -1;
  std::vector<StartOutcome> starts;
  Eigen::VectorXd v_star;
};

namespace detail {

/// Objective, constraints and derivatives in the reduced variable x = k_g.
class DesignEvaluator {
 public:
  explicit DesignEvaluator(const DesignProblem& p)
      : p_(p), n_(p.n()), m_(p.n_g()), limit_(1.0 - p.epsilon) {
    offset_ = p.v_tilde - p.v_ref;
    cols_.resize(n_, m_);
    for (int j = 0; j < m_; ++j) cols_.col(j) = p.sensitivity.col(p.generators[j]);
    if (p.criterion == Criterion::holder) {
      abs_cols_ = cols_.cwiseAbs();
      col_sums_ = abs_cols_.colwise().sum().transpose();
    }
  }

  int dim() const { return m_; }
  double limit() const { return limit_; }

  /// Objective value; optionally its exact gradient. Returns +inf when the
  /// equilibrium does not exist.
  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n_, n_);
    for (int j = 0; j < m_; ++j) A.col(p_.generators[j]) -= cols_.col(j) * x[j];
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    if (!(lu.rcond() > 1e-13)) return std::numeric_limits<double>::infinity();
    const Eigen::VectorXd d = lu.solve(offset_);
    const double reg = m_ > 0 ? p_.beta / m_ : 0.0;
    if (grad) {
      const Eigen::VectorXd lambda = lu.transpose().solve(d);
      grad->resize(m_);
      for (int j = 0; j < m_; ++j) {
        (*grad)[j] = 2.0 * d[p_.generators[j]] * cols_.col(j).dot(lambda) + 2.0 * reg * x[j];
      }
    }
    return d.squaredNorm() + reg * x.squaredNorm();
  }

  /// Constraint slacks limit - g_c(x); all must stay positive.
  Eigen::VectorXd slacks(const Eigen::VectorXd& x) const {
    if (p_.criterion == Criterion::holder) {
      // With x <= 0: row sums  sum_j |S_ij| (-x_j), column sums  (-x_j) sum_i |S_ij|.
      Eigen::VectorXd s(n_ + m_);
      s.head(n_) = limit_ + (abs_cols_ * x).array();
      s.tail(m_) = limit_ + (col_sums_.array() * x.array());
      return s;
    }
    Eigen::VectorXd s(1);
    s[0] = limit_ - criterion_value(p_.sensitivity, p_.generators, x, p_.criterion);
    return s;
  }

  /// Barrier objective f(x) - mu sum log(slack); +inf outside the interior.
  double barrier(const Eigen::VectorXd& x, double mu, Eigen::VectorXd* grad) const {
    double f;
    Eigen::VectorXd s;
    try {
      s = slacks(x);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
    if (!(s.minCoeff() > 0.0)) return std::numeric_limits<double>::infinity();
    f = objective(x, grad);
    if (!std::isfinite(f)) return f;
    f -= mu * s.array().log().sum();
    if (grad) {
      if (p_.criterion == Criterion::holder) {
        // d(slack_row_i)/dx_j = |S_ij|; d(slack_col_j)/dx_j = colsum_j.
        const Eigen::VectorXd inv_row = s.head(n_).cwiseInverse();
        const Eigen::VectorXd inv_col = s.tail(m_).cwiseInverse();
        *grad -= mu * (abs_cols_.transpose() * inv_row);
        *grad -= mu * (col_sums_.array() * inv_col.array()).matrix();
      } else {
        *grad += (mu / s[0]) * value_gradient(x);
      }
    }
    return f;
  }

 private:
  /// One-sided finite-difference gradient of the criterion value, stepping
  /// within the k <= 0 orthant.
  Eigen::VectorXd value_gradient(const Eigen::VectorXd& x) const {
    const double base = criterion_value(p_.sensitivity, p_.generators, x, p_.criterion);
    Eigen::VectorXd g(m_);
    Eigen::VectorXd probe = x;
    for (int j = 0; j < m_; ++j) {
      double h = 1e-7 * std::max(1.0, std::abs(x[j]));
      if (x[j] + h > 0.0) h = -h;
      probe[j] = x[j] + h;
      g[j] = (criterion_value(p_.sensitivity, p_.generators, probe, p_.criterion) - base) / h;
      probe[j] = x[j];
    }
    return g;
  }

  const DesignProblem& p_;
  int n_;
  int m_;
  double limit_;
  Eigen::VectorXd offset_;
  Eigen::MatrixXd cols_;
  Eigen::MatrixXd abs_cols_;
  Eigen::VectorXd col_sums_;
};

struct InnerResult {
  Eigen::VectorXd x;
  int iterations = 0;
};

/// Minimizes the barrier objective over x <= 0 by projected BFGS with an
/// Armijo search along the projection arc.
inline InnerResult minimize_barrier(const DesignEvaluator& ev, Eigen::VectorXd x, double mu,
                                    int max_iter = 500) {
  const int m = ev.dim();
  Eigen::VectorXd g(m), g_new(m);
  double phi = ev.barrier(x, mu, &g);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(m, m);
  bool fresh = true;
  std::vector<char> active(m, 0), active_prev(m, 0);
  InnerResult out;

  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    // Variables pinned at the k = 0 bound whose descent direction leaves the box.
    Eigen::VectorXd pg = g;
    for (int j = 0; j < m; ++j) {
      active[j] = (x[j] >= 0.0 && g[j] < 0.0) ? 1 : 0;
      if (active[j]) pg[j] = 0.0;
    }
    if (pg.lpNorm<Eigen::Infinity>() <= 1e-13) break;
    if (active != active_prev) fresh = true;
    active_prev = active;
    if (fresh) {
      H.setIdentity();
      H *= 0.1 / std::max(pg.lpNorm<Eigen::Infinity>(), 1e-12);
    }

    Eigen::VectorXd dir = -(H * pg);
    for (int j = 0; j < m; ++j) {
      if (active[j]) dir[j] = 0.0;
    }
    if (!(dir.dot(pg) < 0.0)) {
      H.setIdentity();
      H *= 0.1 / std::max(pg.lpNorm<Eigen::Infinity>(), 1e-12);
      dir = -(H * pg);
    }

    double alpha = 1.0;
    Eigen::VectorXd x_new(m);
    double phi_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = (x + alpha * dir).cwiseMin(0.0);
      phi_new = ev.barrier(x_new, mu, &g_new);
      if (std::isfinite(phi_new) && phi_new <= phi + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        fresh = true;
        continue;
      }
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double step = s.lpNorm<Eigen::Infinity>();
    const double decrease = phi - phi_new;
    x = x_new;
    g = g_new;
    phi = phi_new;
    const double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm() && sy > 0.0) {
      if (fresh) H = Eigen::MatrixXd::Identity(m, m) * (sy / y.squaredNorm());
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd V = Eigen::MatrixXd::Identity(m, m) - rho * s * y.transpose();
      H = V * H * V.transpose() + rho * s * s.transpose();
      fresh = false;
    }
    if (step <= 1e-14 * std::max(1.0, x.lpNorm<Eigen::Infinity>()) &&
        decrease <= 1e-16 * std::max(1.0, std::abs(phi))) {
      break;
    }
  }
  out.x = x;
  return out;
}

/// Barrier continuation from a strictly feasible x0.
inline StartOutcome solve_from(const DesignEvaluator& ev, int index, const Eigen::VectorXd& x0) {
  StartOutcome out;
  out.index = index;
  out.k_start = x0;
  Eigen::VectorXd x = x0;
  const double f0 = ev.objective(x);
  const double scale = std::max(std::isfinite(f0) ? f0 : 1.0, 1e-8);
  double mu = 1e-2 * scale;
  const double mu_end = 1e-12 * scale;
  while (true) {
    const InnerResult inner = minimize_barrier(ev, x, mu);
    x = inner.x;
    out.iterations += inner.iterations;
    if (mu <= mu_end) break;
    mu *= 0.1;
  }
  out.k_final = x;
  Eigen::VectorXd s;
  try {
    s = ev.slacks(x);
    out.feasible = s.minCoeff() >= 0.0 && (x.array() <= 0.0).all();
  } catch (const NumericalError&) {
    out.feasible = false;
  }
  out.objective = ev.objective(x);
  if (!std::isfinite(out.objective)) out.feasible = false;
  return out;
}

}  // namespace detail

/// Slopes for the multistart initial points. Start 0 is k = 0; others are
/// uniform in [k_lb, 0]^{n_g} with k_lb = -0.9 (1 - eps) / max_i S_ii over
/// generators, halved until strictly inside the constraint set.
inline std::vector<Eigen::VectorXd> initial_points(const DesignProblem& problem) {
  const int m = problem.n_g();
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::VectorXd::Zero(m));
  double diag_max = 0.0;
  for (int g : problem.generators) diag_max = std::max(diag_max, problem.sensitivity(g, g));
  const double k_lb = diag_max > 0.0 ? -0.9 * (1.0 - problem.epsilon) / diag_max : -1.0;
  std::mt19937_64 rng(problem.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double limit = 1.0 - problem.epsilon;
  for (int s = 1; s < problem.multistart; ++s) {
    Eigen::VectorXd x(m);
    for (int j = 0; j < m; ++j) x[j] = k_lb * unit(rng);
    for (int halvings = 0; halvings < 60; ++halvings) {
      bool interior = false;
      try {
        interior =
            criterion_value(problem.sensitivity, problem.generators, x, problem.criterion) <
            0.9 * limit;
      } catch (const NumericalError&) {
      }
      if (interior) break;
      x *= 0.5;
    }
    starts.push_back(x);
  }
  return starts;
}

inline DesignResult optimize_slopes(const DesignProblem& problem) {
  problem.validate();
  const int n = problem.n();
  DesignResult result;

  if (problem.n_g() == 0) {
    result.k = GainVector::zeros(n);
    const ObjectiveTerms t = design_objective(result.k, problem);
    result.objective = t.total;
    result.deviation_term = t.deviation;
    result.regularization_term = t.regularization;
    result.verdict = make_verdict(problem.criterion, 0.0, problem.epsilon);
    result.v_star = problem.v_tilde;
    return result;
  }

  const detail::DesignEvaluator ev(problem);
  const auto starts = initial_points(problem);
  result.starts.resize(starts.size());
  parallel_for(starts.size(), problem.threads, [&](std::size_t s) {
    result.starts[s] = detail::solve_from(ev, static_cast<int>(s), starts[s]);
  });
  result.starts_tried = static_cast<int>(starts.size());

  // Best feasible objective; ties by smallest ||k||, then lowest start index.
  int best = -1;
  for (const auto& st : result.starts) {
    if (!st.feasible) continue;
    if (best < 0) {
      best = st.index;
      continue;
    }
    const auto& cur = result.starts[best];
    const double tie = 1e-12 * std::max(1.0, std::abs(cur.objective));
    if (st.objective < cur.objective - tie ||
        (std::abs(st.objective - cur.objective) <= tie && st.k_final.norm() < cur.k_final.norm())) {
      best = st.index;
    }
  }
  // k = 0 is strictly feasible, so start 0 always yields a feasible point.
  if (best < 0) throw NumericalError("design found no feasible point");

  result.best_start_index = best;
  result.k = GainVector::from_generator_slopes(n, problem.generators, result.starts[best].k_final);
  const ObjectiveTerms t = design_objective(result.k, problem);
  result.objective = t.total;
  result.deviation_term = t.deviation;
  result.regularization_term = t.regularization;
  result.verdict = check_stability(problem.sensitivity, problem.generators, result.k,
                                   problem.criterion, problem.epsilon);
  result.v_star = equilibrium_voltage(problem.sensitivity, result.k, problem.v_tilde, problem.v_ref);
  return result;
}

/// Same slope at every generator: `fraction` of the largest uniform slope
/// that satisfies the rho criterion at epsilon.
inline GainVector uniform_slopes(const Eigen::MatrixXd& S, const std::vector<int>& gens,
                                 double fraction = 0.5,
                                 double epsilon = kDefaultStabilityEpsilon) {
  const int n = static_cast<int>(S.rows());
  if (gens.empty()) return GainVector::zeros(n);
  const double rho_unit =
      criterion_value(S, gens, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(gens.size())),
                      Criterion::rho);
  const double k = -fraction * (1.0 - epsilon) / rho_unit;
  return GainVector::from_generator_slopes(
      n, gens, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(gens.size()), k));
}

// ---------------------------------------------------------------------------
// Design file

struct DesignMetadata {
  std::string plant = "lpf";  ///< "lpf" or "ldf"
  std::string scenario_id;
  std::string feeder_fingerprint;
  std::vector<std::string> node_ids;
};

inline nlohmann::json design_to_json(const DesignResult& r, const DesignProblem& problem,
                                     const DesignMetadata& meta) {
  nlohmann::json doc;
  doc["format"] = "vvc-design";
  doc["version"] = 1;
  doc["feeder_fingerprint"] = meta.feeder_fingerprint;
  doc["plant"] = meta.plant;
  doc["scenario_id"] = meta.scenario_id;
  doc["criterion"] = std::string(to_string(problem.criterion));
  doc["epsilon"] = problem.epsilon;
  doc["beta"] = problem.beta;
  doc["multistart"] = problem.multistart;
  doc["seed"] = problem.seed;
  nlohmann::json slopes = nlohmann::json::object();
  for (int g : problem.generators) slopes[meta.node_ids.at(g)] = r.k.k[g];
  doc["k"] = slopes;
  doc["objective"] = {{"total", r.objective},
                      {"deviation", r.deviation_term},
                      {"regularization", r.regularization_term}};
  const Eigen::VectorXd k_g = r.k.generator_slopes(problem.generators);
  const Norm1Inf nn = norm1_inf(detail::generator_columns(problem.sensitivity, problem.generators, k_g));
  doc["achieved"] = {
      {"rho", criterion_value(problem.sensitivity, problem.generators, k_g, Criterion::rho)},
      {"norm2", criterion_value(problem.sensitivity, problem.generators, k_g, Criterion::norm2)},
      {"norm1", nn.norm1},
      {"norm_inf", nn.norm_inf}};
  doc["verdict"] = {{"criterion", std::string(to_string(r.verdict.criterion))},
                    {"value", r.verdict.value},
                    {"margin", r.verdict.margin},
                    {"feasible", r.verdict.feasible}};
  doc["starts_tried"] = r.starts_tried;
  doc["best_start_index"] = r.best_start_index;
  nlohmann::json starts = nlohmann::json::array();
  for (const auto& s : r.starts) {
    starts.push_back({{"index", s.index},
                      {"objective", s.objective},
                      {"feasible", s.feasible},
                      {"iterations", s.iterations},
                      {"k_start", detail::to_json_vector(s.k_start)},
                      {"k_final", detail::to_json_vector(s.k_final)}});
  }
  doc["starts"] = starts;
  return doc;
}

/// Reads the sparse slope map of a design file into a full gain vector.
inline GainVector gains_from_design_json(const nlohmann::json& doc,
                                         const std::vector<std::string>& node_ids) {
  GainVector k = GainVector::zeros(static_cast<int>(node_ids.size()));
  try {
    if (doc.value("format", std::string()) != "vvc-design") throw ParseError("not a design file");
    for (const auto& [id, value] : doc.at("k").items()) {
      const auto it = std::find(node_ids.begin(), node_ids.end(), id);
      if (it == node_ids.end()) throw ParseError("design references unknown node " + id);
      k.k[it - node_ids.begin()] = value.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("design file: ") + e.what());
  }
  return k;
}

}  // namespace vvc
