#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "support.hpp"
#include "vvc/stability.hpp"

using namespace vvc;
using vvc::testing::feeder;
using vvc::testing::fixture_jq;

namespace {

/// Spectral radius of a 2x2 matrix from its characteristic polynomial.
double quadratic_rho(double tr, double det) {
  const std::complex<double> disc = std::sqrt(std::complex<double>(tr * tr - 4.0 * det));
  return std::max(std::abs((tr + disc) / 2.0), std::abs((tr - disc) / 2.0));
}

Eigen::MatrixXd random_matrix(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = u(rng);
  return M;
}

double full_rho(const Eigen::MatrixXd& S, const GainVector& k) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(S * k.k.asDiagonal());
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST(ReduceGeneratorBlock, SingleGenerator) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd S = random_matrix(3, rng);
  GainVector k = GainVector::zeros(3);
  k.k[2] = -0.5;
  const Eigen::MatrixXd M = reduce_generator_block(S, {2}, k);
  ASSERT_EQ(M.rows(), 1);
  EXPECT_DOUBLE_EQ(M(0, 0), -0.5 * S(2, 2));
}

TEST(ReduceGeneratorBlock, AllGeneratorsIsIdentityReduction) {
  const Eigen::MatrixXd S = fixture_jq();
  const GainVector k{Eigen::Vector2d(-0.3, -0.7)};
  EXPECT_EQ(reduce_generator_block(S, {0, 1}, k), S * k.k.asDiagonal().toDenseMatrix());
  EXPECT_THROW(reduce_generator_block(S, {}, k), ConfigError);
}

TEST(ReduceGeneratorBlock, SpectrumMatchesFullMatrix) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 0.0);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd S = random_matrix(5, rng);
    GainVector k = GainVector::zeros(5);
    k.k[1] = u(rng);
    k.k[3] = u(rng);
    Eigen::EigenSolver<Eigen::MatrixXd> red(reduce_generator_block(S, {1, 3}, k));
    Eigen::EigenSolver<Eigen::MatrixXd> full(S * k.k.asDiagonal());
    std::vector<std::complex<double>> nonzero;
    for (const auto& l : full.eigenvalues()) {
      if (std::abs(l) > 1e-12) nonzero.push_back(l);
    }
    ASSERT_EQ(nonzero.size(), 2u);
    for (const auto& l : red.eigenvalues()) {
      double best = 1e300;
      for (const auto& m : nonzero) best = std::min(best, std::abs(l - m));
      EXPECT_LT(best, 1e-10);
    }
  }
}

TEST(ReduceGeneratorBlock, ExactOnBundledFeeders) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 0.0);
  for (const auto& name : vvc::testing::bundled_feeders()) {
    const NetworkModel net = feeder(name);
    if (net.n_g() == 0) continue;
    const LdfModel ldf = build_ldf(net);
    for (int t = 0; t < 10; ++t) {
      Eigen::VectorXd k_g(net.n_g());
      for (auto& x : k_g) x = u(rng);
      const GainVector k = GainVector::from_generator_slopes(net.n(), net.generators(), k_g);
      EXPECT_NEAR(spectral_radius(reduce_generator_block(ldf.X, net.generators(), k)),
                  full_rho(ldf.X, k), 1e-10)
          << name;
    }
  }
}

TEST(SpectralRadius, Basics) {
  EXPECT_DOUBLE_EQ(spectral_radius(Eigen::MatrixXd::Identity(3, 3)), 1.0);
  EXPECT_NEAR(spectral_radius(Eigen::Vector2d(0.5, -0.3).asDiagonal().toDenseMatrix()), 0.5, 1e-15);
  Eigen::MatrixXd rot(2, 2);
  rot << 0.0, -0.8, 0.8, 0.0;
  EXPECT_NEAR(spectral_radius(rot), 0.8, 1e-14);
  EXPECT_THROW(spectral_radius(Eigen::MatrixXd::Zero(2, 3)), DimensionError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(0, 1) = NAN;
  EXPECT_THROW(spectral_radius(bad), NumericalError);
}

TEST(SpectralRadius, FixtureQuadratic) {
  const Eigen::MatrixXd S = fixture_jq();
  const Eigen::MatrixXd M = S * Eigen::Vector2d(-0.4, -0.4).asDiagonal();
  const double tr = -0.4 * (S(0, 0) + S(1, 1));
  const double det = 0.16 * (S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0));
  EXPECT_NEAR(tr, -1.26592, 1e-12);
  EXPECT_NEAR(spectral_radius(M), quadratic_rho(tr, det), 1e-12);
}

TEST(SpectralRadius, Scaling) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd M = random_matrix(6, rng);
    for (double a : {-3.0, -0.5, 0.25, 7.0}) {
      EXPECT_NEAR(spectral_radius(a * M), std::abs(a) * spectral_radius(M), 1e-10);
    }
  }
}

TEST(Norms, DiagonalAndNilpotent) {
  const Eigen::MatrixXd D = Eigen::Vector2d(0.5, -0.3).asDiagonal();
  EXPECT_NEAR(norm2(D), 0.5, 1e-15);
  const Norm1Inf nn = norm1_inf(D);
  EXPECT_DOUBLE_EQ(nn.norm1, 0.5);
  EXPECT_DOUBLE_EQ(nn.norm_inf, 0.5);
  Eigen::MatrixXd N(2, 2);
  N << 0.0, 1.0, 0.0, 0.0;
  EXPECT_NEAR(norm2(N), 1.0, 1e-15);
  EXPECT_EQ(spectral_radius(N), 0.0);
  Eigen::MatrixXd A(2, 2);
  A << 1.0, -2.0, 3.0, 4.0;
  EXPECT_DOUBLE_EQ(norm1_inf(A).norm1, 6.0);
  EXPECT_DOUBLE_EQ(norm1_inf(A).norm_inf, 7.0);
}

TEST(Norms, RhoBelowNorm2BelowGeometricMean) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    const Eigen::MatrixXd M = random_matrix(4, rng);
    const Norm1Inf nn = norm1_inf(M);
    EXPECT_LE(spectral_radius(M), norm2(M) + 1e-12);
    EXPECT_LE(norm2(M), std::sqrt(nn.norm1 * nn.norm_inf) + 1e-12);
  }
}

TEST(CheckStability, ZeroGainIsFeasible) {
  const LdfModel ldf = build_ldf(feeder("lateral6.json"));
  for (Criterion c : {Criterion::rho, Criterion::norm2, Criterion::holder}) {
    const StabilityVerdict v = check_stability(ldf, GainVector::zeros(ldf.n()), c);
    EXPECT_TRUE(v.feasible);
    EXPECT_EQ(v.value, 0.0);
    EXPECT_DOUBLE_EQ(v.margin, 1.0 - 1e-3);
  }
}

TEST(CheckStability, HolderBoundaryIsNested) {
  const Eigen::MatrixXd S = fixture_jq();
  const std::vector<int> gens{0, 1};
  // Uniform slope -c: row sums c (S00 + S01), c (S10 + S11); column sums analogous.
  const double worst_sum = std::max({S(0, 0) + S(0, 1), S(1, 0) + S(1, 1), S(0, 0) + S(1, 0),
                                     S(0, 1) + S(1, 1)});
  const GainVector k{Eigen::Vector2d::Constant(-(1.0 - 1e-3) / worst_sum)};
  const StabilityVerdict h = check_stability(S, gens, k, Criterion::holder);
  EXPECT_NEAR(h.margin, 0.0, 1e-12);
  EXPECT_TRUE(check_stability(S, gens, k, Criterion::norm2).feasible);
  EXPECT_TRUE(check_stability(S, gens, k, Criterion::rho).feasible);
}

TEST(CheckStability, MarginDefinition) {
  const StabilityVerdict v = make_verdict(Criterion::rho, 1.05, 1e-3);
  EXPECT_FALSE(v.feasible);
  EXPECT_NEAR(v.margin, -0.051, 1e-12);
  // A scalar plant reaching rho = 1.05.
  const Eigen::MatrixXd S = Eigen::MatrixXd::Constant(1, 1, 2.1);
  const StabilityVerdict w = check_stability(S, {0}, GainVector{Eigen::VectorXd::Constant(1, -0.5)},
                                             Criterion::rho);
  EXPECT_NEAR(w.value, 1.05, 1e-15);
  EXPECT_FALSE(w.feasible);
}

TEST(CheckStability, RejectsInvalidGains) {
  const LdfModel ldf = build_ldf(feeder("lateral6.json"));
  GainVector k = GainVector::zeros(ldf.n());
  k.k[ldf.generators[0]] = 0.1;
  EXPECT_THROW(check_stability(ldf, k, Criterion::rho), ConfigError);
  k = GainVector::zeros(ldf.n());
  k.k[0] = -0.1;  // node "a" is a load
  EXPECT_THROW(check_stability(ldf, k, Criterion::rho), ConfigError);
  EXPECT_THROW(check_stability(ldf, GainVector::zeros(2), Criterion::rho), DimensionError);
  EXPECT_THROW(check_stability(ldf, GainVector::zeros(ldf.n()), Criterion::rho, 1.5), ConfigError);
  EXPECT_THROW(parse_criterion("spectral"), ConfigError);
  EXPECT_EQ(parse_criterion("holder"), Criterion::holder);
}

TEST(CheckStability, NonFiniteModelIsInfeasibleWithDiagnostic) {
  Eigen::MatrixXd S = fixture_jq();
  S(0, 1) = NAN;
  const StabilityVerdict v =
      check_stability(S, {0, 1}, GainVector{Eigen::Vector2d(-0.1, -0.1)}, Criterion::rho);
  EXPECT_FALSE(v.feasible);
  EXPECT_FALSE(v.diagnostic.empty());
}

TEST(CheckStability, LdfUsesX) {
  const LdfModel ldf = build_ldf(feeder("lateral6.json"));
  Eigen::VectorXd k_g = Eigen::VectorXd::Constant(ldf.generators.size(), -0.5);
  const GainVector k = GainVector::from_generator_slopes(ldf.n(), ldf.generators, k_g);
  EXPECT_NEAR(check_stability(ldf, k, Criterion::norm2).value,
              (ldf.X * k.k.asDiagonal()).jacobiSvd().singularValues()(0), 1e-12);
}

TEST(Region, NestingOverRandomSamples) {
  const Eigen::MatrixXd S = fixture_jq();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.5, 0.0);
  const double limit = 1.0 - 1e-3;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Vector2d k(u(rng), u(rng));
    const bool h = criterion_value(S, {0, 1}, k, Criterion::holder) <= limit;
    const bool n2 = criterion_value(S, {0, 1}, k, Criterion::norm2) <= limit;
    const bool r = criterion_value(S, {0, 1}, k, Criterion::rho) <= limit;
    if (h) EXPECT_TRUE(n2);
    if (n2) EXPECT_TRUE(r);
  }
}

TEST(Region, GridStrictContainment) {
  const auto samples = sample_region(fixture_jq(), 200, -1.5, 0.0);
  ASSERT_EQ(samples.size(), 40000u);
  int n_rho = 0, n_norm2 = 0, n_holder = 0;
  for (const auto& s : samples) {
    if (s.holder) EXPECT_TRUE(s.norm2);
    if (s.norm2) EXPECT_TRUE(s.rho);
    n_rho += s.rho;
    n_norm2 += s.norm2;
    n_holder += s.holder;
  }
  EXPECT_GT(n_rho, n_norm2);
  EXPECT_GT(n_norm2, n_holder);
  EXPECT_GT(n_holder, 0);
  EXPECT_THROW(sample_region(fixture_jq(), 1, -1.5, 0.0), ConfigError);
}
