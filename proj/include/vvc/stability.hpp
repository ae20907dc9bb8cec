#pragma once

// Stability criteria for the linear closed loop v[t+1] = S K v[t] + const,
// where S is the plant sensitivity (Jq for LPF, X for LDF) and K = diag(k).
//
//   rho    : spectral radius of S K          (necessary and sufficient)
//   norm2  : largest singular value of S K   (sufficient)
//   holder : max(||S K||_1, ||S K||_inf)     (sufficient, linear in k <= 0)
//
// Each criterion is satisfied when its value is at most 1 - epsilon.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vvc/error.hpp"
#include "vvc/linmodels.hpp"

namespace vvc {

enum class Criterion { rho, norm2, holder };

inline constexpr double kDefaultStabilityEpsilon = 1e-3;

inline std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::rho: return "rho";
    case Criterion::norm2: return "norm2";
    case Criterion::holder: return "holder";
  }
  return "rho";
}

inline Criterion parse_criterion(std::string_view text) {
  if (text == "rho") return Criterion::rho;
  if (text == "norm2") return Criterion::norm2;
  if (text == "holder") return Criterion::holder;
  throw ConfigError("unknown stability criterion: " + std::string(text));
}

/// Per-node VVC slopes k (length n). Non-positive on generators, zero elsewhere.
struct GainVector {
  Eigen::VectorXd k;

  static GainVector zeros(int n) { return {Eigen::VectorXd::Zero(n)}; }

  static GainVector from_generator_slopes(int n, const std::vector<int>& gens,
                                          const Eigen::VectorXd& k_g) {
    if (k_g.size() != static_cast<Eigen::Index>(gens.size())) {
      throw DimensionError("generator slope vector length does not match generator set");
    }
    GainVector out = zeros(n);
    for (std::size_t i = 0; i < gens.size(); ++i) out.k[gens[i]] = k_g[static_cast<Eigen::Index>(i)];
    return out;
  }

  Eigen::VectorXd generator_slopes(const std::vector<int>& gens) const {
    Eigen::VectorXd k_g(static_cast<Eigen::Index>(gens.size()));
    for (std::size_t i = 0; i < gens.size(); ++i) k_g[static_cast<Eigen::Index>(i)] = k[gens[i]];
    return k_g;
  }

  GainVector scaled(double factor) const { return {k * factor}; }

  /// Throws ConfigError if a sign or sparsity invariant is violated.
  void validate(const std::vector<int>& gens) const {
    std::vector<char> is_gen(static_cast<std::size_t>(k.size()), 0);
    for (int g : gens) is_gen.at(static_cast<std::size_t>(g)) = 1;
    for (Eigen::Index i = 0; i < k.size(); ++i) {
      if (!std::isfinite(k[i])) throw ConfigError("non-finite slope at position " + std::to_string(i));
      if (is_gen[static_cast<std::size_t>(i)] && k[i] > 0.0) {
        throw ConfigError("positive slope at generator position " + std::to_string(i));
      }
      if (!is_gen[static_cast<std::size_t>(i)] && k[i] != 0.0) {
        throw ConfigError("nonzero slope at non-generator position " + std::to_string(i));
      }
    }
  }
};

/// M = S[gens, gens] diag(k[gens]). Its eigenvalues are the nonzero spectrum
/// of S K, since the remaining columns of S K vanish.
inline Eigen::MatrixXd reduce_generator_block(const Eigen::MatrixXd& S, const std::vector<int>& gens,
                                              const GainVector& k) {
  if (gens.empty()) throw ConfigError("generator-block reduction needs at least one generator");
  const auto m = static_cast<Eigen::Index>(gens.size());
  Eigen::MatrixXd block(m, m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const double kc = k.k[gens[c]];
    for (Eigen::Index r = 0; r < m; ++r) block(r, c) = S(gens[r], gens[c]) * kc;
  }
  return block;
}

/// max |lambda| over the (possibly complex) eigenvalues. Throws NumericalError
/// if the QR iteration fails.
inline double spectral_radius(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw DimensionError("spectral radius needs a square matrix");
  if (M.size() == 0) return 0.0;
  if (!M.allFinite()) throw NumericalError("spectral radius of a non-finite matrix");
  if (M.rows() == 1) return std::abs(M(0, 0));
  Eigen::EigenSolver<Eigen::MatrixXd> solver(M, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigenvalue iteration did not converge");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline double norm2(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  if (!M.allFinite()) throw NumericalError("2-norm of a non-finite matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  return svd.singularValues()(0);
}

struct Norm1Inf {
  double norm1 = 0.0;    ///< max absolute column sum
  double norm_inf = 0.0; ///< max absolute row sum
};

inline Norm1Inf norm1_inf(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return {};
  const Eigen::MatrixXd a = M.cwiseAbs();
  return {a.colwise().sum().maxCoeff(), a.rowwise().sum().maxCoeff()};
}

namespace detail {

/// Columns of S K that can be nonzero: S[:, gens] diag(k_g).
inline Eigen::MatrixXd generator_columns(const Eigen::MatrixXd& S, const std::vector<int>& gens,
                                         const Eigen::VectorXd& k_g) {
  Eigen::MatrixXd B(S.rows(), static_cast<Eigen::Index>(gens.size()));
  for (std::size_t c = 0; c < gens.size(); ++c) {
    B.col(static_cast<Eigen::Index>(c)) = S.col(gens[c]) * k_g[static_cast<Eigen::Index>(c)];
  }
  return B;
}

}  // namespace detail

/// Value of the chosen criterion for generator slopes k_g (ordered as gens).
inline double criterion_value(const Eigen::MatrixXd& S, const std::vector<int>& gens,
                              const Eigen::VectorXd& k_g, Criterion criterion) {
  if (gens.empty()) return 0.0;
  switch (criterion) {
    case Criterion::rho: {
      const auto m = static_cast<Eigen::Index>(gens.size());
      Eigen::MatrixXd block(m, m);
      for (Eigen::Index c = 0; c < m; ++c) {
        for (Eigen::Index r = 0; r < m; ++r) block(r, c) = S(gens[r], gens[c]) * k_g[c];
      }
      return spectral_radius(block);
    }
    case Criterion::norm2:
      return norm2(detail::generator_columns(S, gens, k_g));
    case Criterion::holder: {
      const Norm1Inf nn = norm1_inf(detail::generator_columns(S, gens, k_g));
      return std::max(nn.norm1, nn.norm_inf);
    }
  }
  return 0.0;
}

struct StabilityVerdict {
  Criterion criterion = Criterion::rho;
  double value = 0.0;
  double margin = 0.0;  ///< (1 - epsilon) - value
  bool feasible = false;
  double epsilon = kDefaultStabilityEpsilon;
  std::string diagnostic;
};

inline StabilityVerdict make_verdict(Criterion criterion, double value, double epsilon) {
  StabilityVerdict v;
  v.criterion = criterion;
  v.value = value;
  v.epsilon = epsilon;
  v.margin = (1.0 - epsilon) - value;
  v.feasible = v.margin >= 0.0;
  return v;
}

/// Evaluates a criterion against sensitivity S. Eigen/SVD failures produce an
/// infeasible verdict carrying the diagnostic.
inline StabilityVerdict check_stability(const Eigen::MatrixXd& S, const std::vector<int>& gens,
                                        const GainVector& k, Criterion criterion,
                                        double epsilon = kDefaultStabilityEpsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("stability epsilon must lie in (0, 1)");
  if (k.k.size() != S.rows()) throw DimensionError("gain vector length does not match model");
  k.validate(gens);
  try {
    return make_verdict(criterion, criterion_value(S, gens, k.generator_slopes(gens), criterion),
                        epsilon);
  } catch (const NumericalError& e) {
    StabilityVerdict v = make_verdict(criterion, std::numeric_limits<double>::infinity(), epsilon);
    v.feasible = false;
    v.diagnostic = e.what();
    return v;
  }
}

inline StabilityVerdict check_stability(const LpfModel& model, const GainVector& k,
                                        Criterion criterion,
                                        double epsilon = kDefaultStabilityEpsilon) {
  return check_stability(model.Jq, model.generators, k, criterion, epsilon);
}

inline StabilityVerdict check_stability(const LdfModel& model, const GainVector& k,
                                        Criterion criterion,
                                        double epsilon = kDefaultStabilityEpsilon) {
  return check_stability(model.X, model.generators, k, criterion, epsilon);
}

// ---------------------------------------------------------------------------
// Two-generator feasible-region sampling

struct RegionSample {
  double k1 = 0.0;
  double k2 = 0.0;
  bool rho = false;
  bool norm2 = false;
  bool holder = false;
};

/// Evaluates all three criteria on a grid x grid lattice over [lo, hi]^2
/// (endpoints included) for a two-generator sensitivity block.
inline std::vector<RegionSample> sample_region(const Eigen::Matrix2d& S, int grid, double lo,
                                               double hi,
                                               double epsilon = kDefaultStabilityEpsilon) {
  if (grid < 2) throw ConfigError("region grid needs at least 2 points per axis");
  const Eigen::MatrixXd Sd = S;
  const std::vector<int> gens{0, 1};
  std::vector<RegionSample> out;
  out.reserve(static_cast<std::size_t>(grid) * grid);
  const double limit = 1.0 - epsilon;
  for (int a = 0; a < grid; ++a) {
    for (int b = 0; b < grid; ++b) {
      RegionSample s;
      s.k1 = lo + (hi - lo) * a / (grid - 1);
      s.k2 = lo + (hi - lo) * b / (grid - 1);
      const Eigen::Vector2d k(s.k1, s.k2);
      s.rho = criterion_value(Sd, gens, k, Criterion::rho) <= limit;
      s.norm2 = criterion_value(Sd, gens, k, Criterion::norm2) <= limit;
      s.holder = criterion_value(Sd, gens, k, Criterion::holder) <= limit;
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace vvc
