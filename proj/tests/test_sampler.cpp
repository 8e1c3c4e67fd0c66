#include "embedgt/random.hpp"
#include "embedgt/sampler.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace embedgt;

namespace {

struct GaussianTarget {
  Eigen::VectorXd mean;
  double operator()(const Eigen::VectorXd &z) const { return -0.5 * (z - mean).squaredNorm(); }
};

GaussianTarget target_3d() {
  Eigen::VectorXd m(3);
  m << 1.0, -1.0, 0.0;
  return {m};
}

} // namespace

TEST(RwMetropolis, GaussianMomentsWithinEssError) {
  const auto target = target_3d();
  McmcConfig cfg;
  cfg.n_retained = 10000;
  cfg.burn_in = 500;
  cfg.thin = 5;
  cfg.proposal_scale = 1.0;
  cfg.seed = 42;
  const auto d = rw_metropolis(target, Eigen::VectorXd::Zero(3), cfg);
  EXPECT_FALSE(d.acceptance_warning);
  const Eigen::VectorXd mean = posterior_mean(d);
  const Eigen::MatrixXd cov = posterior_covariance(d);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const Eigen::VectorXd col = d.draws.col(k);
    const double ess = oracle::effective_sample_size(col);
    const double sd = std::sqrt(cov(k, k));
    EXPECT_NEAR(mean[k], target.mean[k], 3 * sd / std::sqrt(ess)) << "dim " << k << " ess " << ess;
    EXPECT_NEAR(cov(k, k), 1.0, 0.1);
    // Second moment z-test: Var(z^2 - 1) = 2 for a unit Gaussian.
    const Eigen::VectorXd sq = (col.array() - target.mean[k]).square() - 1.0;
    const double ess2 = oracle::effective_sample_size(sq);
    EXPECT_NEAR(sq.mean(), 0.0, 3 * std::sqrt(2.0 / ess2));
  }
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(3, 3)).norm(), 0.15 * std::sqrt(3.0));
}

TEST(RwMetropolis, SameSeedBitIdentical) {
  McmcConfig cfg;
  cfg.seed = 7;
  cfg.n_retained = 200;
  const auto a = rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg);
  const auto b = rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg);
  EXPECT_TRUE((a.draws.array() == b.draws.array()).all());
  EXPECT_EQ(a.acceptance_rate, b.acceptance_rate);
  cfg.seed = 8;
  const auto c = rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg);
  EXPECT_FALSE((a.draws.array() == c.draws.array()).all());
}

TEST(RwMetropolis, TinyProposalStaysAtMode) {
  const auto target = target_3d();
  McmcConfig cfg;
  cfg.proposal_scale = 1e-9;
  cfg.adapt = false;
  cfg.n_retained = 100;
  const auto d = rw_metropolis(target, target.mean, cfg);
  EXPECT_GT(d.acceptance_rate, 0.99);
  EXPECT_LT((d.draws.rowwise() - target.mean.transpose()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(RwMetropolis, FlatTargetIsGaussianWalk) {
  McmcConfig cfg;
  cfg.proposal_scale = 0.3;
  cfg.adapt = false;
  cfg.burn_in = 0;
  cfg.thin = 1;
  cfg.n_retained = 50000;
  cfg.seed = 3;
  const auto d = rw_metropolis([](const Eigen::VectorXd &) { return 0.0; }, Eigen::VectorXd::Zero(2), cfg);
  EXPECT_EQ(d.acceptance_rate, 1.0);
  const Eigen::MatrixXd inc = d.draws.bottomRows(d.draws.rows() - 1) - d.draws.topRows(d.draws.rows() - 1);
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double m = inc.col(k).mean();
    const double sd = std::sqrt((inc.col(k).array() - m).square().sum() / static_cast<double>(inc.rows() - 1));
    EXPECT_NEAR(m, 0.0, 3 * 0.3 / std::sqrt(static_cast<double>(inc.rows())));
    EXPECT_NEAR(sd, 0.3, 0.05 * 0.3);
  }
}

TEST(RwMetropolis, AdaptationOnlyDuringBurnIn) {
  McmcConfig cfg;
  cfg.proposal_scale = 50.0;
  cfg.burn_in = 2000;
  cfg.n_retained = 500;
  cfg.seed = 4;
  const auto adapted = rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg);
  EXPECT_LT(adapted.final_proposal_scale, 10.0);
  EXPECT_GT(adapted.acceptance_rate, 0.1);
  EXPECT_LT(adapted.acceptance_rate, 0.5);

  cfg.burn_in = 0;
  const auto frozen = rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg);
  EXPECT_EQ(frozen.final_proposal_scale, 50.0);

  cfg.burn_in = 2000;
  cfg.adapt = false;
  const auto fixed = rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg);
  EXPECT_EQ(fixed.final_proposal_scale, 50.0);
  EXPECT_TRUE(fixed.acceptance_warning);
}

TEST(RwMetropolis, ShapedProposalMatchesCorrelatedTarget) {
  Eigen::Matrix2d s;
  s << 1.0, 0.95, 0.95, 1.0;
  const Eigen::Matrix2d prec = s.inverse();
  auto target = [&](const Eigen::VectorXd &z) { return -0.5 * z.dot(prec * z); };
  McmcConfig cfg;
  cfg.n_retained = 5000;
  cfg.burn_in = 500;
  cfg.thin = 5;
  cfg.seed = 9;
  const Eigen::MatrixXd factor = s.llt().matrixL();
  const auto d = rw_metropolis(target, Eigen::VectorXd::Zero(2), cfg, factor);
  EXPECT_NEAR(posterior_covariance(d)(0, 1), 0.95, 0.1);
  EXPECT_THROW(rw_metropolis(target, Eigen::VectorXd::Zero(2), cfg, Eigen::MatrixXd::Identity(3, 3)), DomainError);
}

TEST(RwMetropolis, RejectsBadInputs) {
  McmcConfig cfg;
  cfg.thin = 0;
  EXPECT_THROW(rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg), DomainError);
  cfg = {};
  cfg.proposal_scale = -1;
  EXPECT_THROW(rw_metropolis(target_3d(), Eigen::VectorXd::Zero(3), cfg), DomainError);
  cfg = {};
  auto minus_inf = [](const Eigen::VectorXd &) { return -std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(rw_metropolis(minus_inf, Eigen::VectorXd::Zero(3), cfg), DomainError);
}

TEST(PosteriorSummaries, Examples) {
  PosteriorDraws d;
  d.draws.resize(1, 2);
  d.draws << 0.5, -2.0;
  EXPECT_EQ(posterior_mean(d), d.draws.row(0).transpose());
  EXPECT_THROW(posterior_covariance(d), DomainError);

  d.draws.resize(2, 2);
  d.draws << 0.5, -2.0, -0.5, 2.0;
  EXPECT_EQ(posterior_mean(d), Eigen::Vector2d::Zero());

  d.draws << 1.0, 0.0, -1.0, 0.0;
  Eigen::Matrix2d expected;
  expected << 2.0, 0.0, 0.0, 0.0;
  EXPECT_EQ(posterior_covariance(d), expected);

  d.draws << 3.0, 4.0, 3.0, 4.0;
  EXPECT_EQ(posterior_covariance(d), Eigen::Matrix2d::Zero());
}

TEST(Random, SeedDerivation) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
  EXPECT_EQ(pattern_key(VoteCounts{1, 2, 3}), pattern_key(VoteCounts{1, 2, 3}));
  EXPECT_NE(pattern_key(VoteCounts{1, 2, 3}), pattern_key(VoteCounts{3, 2, 1}));
}

TEST(Random, LogGammaSmallShapeMean) {
  Rng rng(12);
  for (double shape : {0.05, 0.3, 2.5}) {
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double g = std::exp(draw_log_gamma(rng, shape));
      s += g;
      s2 += g * g;
    }
    EXPECT_NEAR(s / n, shape, 3 * std::sqrt(shape / n)) << shape;
    EXPECT_NEAR(s2 / n - (s / n) * (s / n), shape, 0.1 * shape + 0.02) << shape;
  }
  // Shapes far below machine epsilon still give a finite log.
  EXPECT_TRUE(std::isfinite(draw_log_gamma(rng, 1e-13)));
}

TEST(Random, MultinomialTotalsAndMeans) {
  Rng rng(5);
  Eigen::Vector3d p(0.2, 0.5, 0.3);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  const int n = 20000;
  for (int r = 0; r < n; ++r) {
    const auto y = draw_multinomial(rng, 10, p);
    EXPECT_EQ(y[0] + y[1] + y[2], 10);
    for (int k = 0; k < 3; ++k)
      sum[k] += y[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(sum[k] / n, 10 * p[k], 3 * std::sqrt(10 * p[k] * (1 - p[k]) / n));
}
