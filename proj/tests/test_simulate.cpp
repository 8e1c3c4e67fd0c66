#include "embedgt/kernels.hpp"
#include "embedgt/simulate.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace embedgt;

TEST(Simulate, ConcentratedPriorGivesUnanimousVotes) {
  Eigen::Vector3d mu(-10.0, 10.0, -10.0);
  SimSpec spec{500, {100}, GaussianPrior(mu, 1e-12 * Eigen::Matrix3d::Identity()), 3, std::nullopt};
  const auto sim = sample_dataset(spec);
  int unanimous = 0;
  for (const auto &inst : sim.dataset.instances())
    unanimous += inst.votes[1] == inst.votes.total() ? 1 : 0;
  EXPECT_GT(unanimous / 500.0, 0.99);
}

TEST(Simulate, SymmetricPriorMeanSoftmax) {
  SimSpec spec{10000, {100}, GaussianPrior(Eigen::Vector3d::Zero(), 10.0 * Eigen::Matrix3d::Identity()), 21,
               std::nullopt};
  const auto sim = sample_dataset(spec);
  Eigen::MatrixXd p(10000, 3);
  for (Eigen::Index i = 0; i < 10000; ++i)
    p.row(i) = softmax(sim.true_embeddings.row(i).transpose()).transpose();
  for (int k = 0; k < 3; ++k) {
    const double m = p.col(k).mean();
    const double sd = std::sqrt((p.col(k).array() - m).square().sum() / 9999.0);
    EXPECT_NEAR(m, 1.0 / 3.0, 4 * sd / 100.0);
  }
}

TEST(Simulate, Reproducible) {
  SimSpec spec{50, {20}, GaussianPrior(Eigen::Vector3d(1, 0, -1), Eigen::Matrix3d::Identity()), 9, std::nullopt};
  const auto a = sample_dataset(spec);
  const auto b = sample_dataset(spec);
  EXPECT_EQ(a.dataset, b.dataset);
  EXPECT_TRUE((a.true_embeddings.array() == b.true_embeddings.array()).all());
  spec.seed = 10;
  EXPECT_NE(sample_dataset(spec).dataset, a.dataset);
  for (const auto &inst : a.dataset.instances())
    EXPECT_EQ(inst.votes.total(), 20);
}

TEST(Simulate, PerInstanceVotesAndValidation) {
  const GaussianPrior prior(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
  const auto sim = sample_dataset({3, {1, 5, 9}, prior, 1, std::nullopt});
  EXPECT_EQ(sim.dataset[0].votes.total(), 1);
  EXPECT_EQ(sim.dataset[2].votes.total(), 9);
  EXPECT_THROW(sample_dataset({3, {1, 5}, prior, 1, std::nullopt}), DomainError);
  EXPECT_THROW(sample_dataset({3, {0}, prior, 1, std::nullopt}), DomainError);
  EXPECT_THROW(sample_dataset({0, {3}, prior, 1, std::nullopt}), DomainError);
  EXPECT_THROW(sample_dataset({3, {3}, prior, 1, ClassLabels({"a", "b", "c"})}), DomainError);
}

TEST(Simulate, MarginalConsistencyWithKernel) {
  // One fixed z; the per-draw counts should follow the Dirichlet-multinomial pmf.
  const Eigen::Vector3d z(0.3, -0.4, 0.8);
  const Eigen::Vector3d alpha = z.array().exp();
  const int n = 1'000'000;
  Rng rng(2);
  std::map<std::vector<int>, int> counts;
  for (int r = 0; r < n; ++r)
    ++counts[draw_multinomial(rng, 4, draw_dirichlet(rng, alpha))];
  for (const auto &y : oracle::compositions(3, 4)) {
    const double p = std::exp(log_dirichlet_multinomial_marginal(VoteCounts(y), z));
    const double hat = static_cast<double>(counts[y]) / n;
    EXPECT_NEAR(hat, p, 3 * std::sqrt(p * (1 - p) / n) + 1e-9);
  }
}

TEST(Simulate, ClassPermutationPermutesDistribution) {
  const Eigen::Vector3d mu(1.0, 0.0, -1.0);
  const Eigen::Vector3d mu_perm(-1.0, 1.0, 0.0); // classes (2, 0, 1)
  const auto a = sample_dataset({20000, {10}, GaussianPrior(mu, 0.5 * Eigen::Matrix3d::Identity()), 1, std::nullopt});
  const auto b =
      sample_dataset({20000, {10}, GaussianPrior(mu_perm, 0.5 * Eigen::Matrix3d::Identity()), 2, std::nullopt});
  Eigen::Vector3d ma = Eigen::Vector3d::Zero(), mb = Eigen::Vector3d::Zero();
  Eigen::Vector3d sa = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < 20000; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      ma[static_cast<Eigen::Index>(k)] += a.dataset[i].votes[k];
      sa[static_cast<Eigen::Index>(k)] += std::pow(a.dataset[i].votes[k], 2);
      mb[static_cast<Eigen::Index>(k)] += b.dataset[i].votes[k];
    }
  }
  ma /= 20000;
  mb /= 20000;
  const int map[3] = {1, 2, 0}; // class k of a is class map[k] of b
  for (int k = 0; k < 3; ++k) {
    const double var = sa[k] / 20000 - ma[k] * ma[k];
    EXPECT_NEAR(ma[k], mb[map[k]], 4 * std::sqrt(2 * var / 20000));
  }
}

TEST(Recovery, ExactAndShiftedFits) {
  Eigen::MatrixXd truth(3, 3);
  truth << 1, 0, -1, 0.5, 0.5, 2, -3, 1, 0;
  const Eigen::Vector3d mu(1, 0, -1);
  const auto exact = recovery_score(mu, truth, mu, truth);
  EXPECT_EQ(exact.rmse_mu, 0.0);
  EXPECT_EQ(exact.median_tv(), 0.0);

  const Eigen::MatrixXd shifted = truth.array() + 0.8;
  const auto s = recovery_score(mu, truth, Eigen::Vector3d(mu.array() + 0.8), shifted);
  EXPECT_NEAR(s.rmse_mu, 0.8, 1e-12);
  for (double tv : s.tv_distance)
    EXPECT_NEAR(tv, 0.0, 1e-15);

  EXPECT_THROW(recovery_score(mu, truth, mu, truth.leftCols(2)), DomainError);
}

TEST(Recovery, MedianOfEvenCount) {
  RecoveryScore s;
  s.tv_distance = {0.4, 0.1, 0.3, 0.2};
  EXPECT_DOUBLE_EQ(s.median_tv(), 0.25);
}
