#pragma once

// Forward sampler of the generative model z -> pi -> votes.

#include "embedgt/em.hpp"
#include "embedgt/error.hpp"
#include "embedgt/random.hpp"
#include "embedgt/types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace embedgt {

struct SimSpec {
  std::size_t n = 0;
  /// Either one entry (shared J) or one entry per instance.
  std::vector<int> votes_per_instance;
  GaussianPrior prior;
  std::uint64_t seed = 0;
  std::optional<ClassLabels> labels;

  [[nodiscard]] int votes_for(std::size_t i) const {
    return votes_per_instance.size() == 1 ? votes_per_instance.front() : votes_per_instance.at(i);
  }

  void validate() const {
    if (n < 1)
      throw DomainError("simulation needs n >= 1");
    if (prior.dim() < 2)
      throw DomainError("simulation needs K >= 2");
    if (votes_per_instance.size() != 1 && votes_per_instance.size() != n)
      throw DomainError("give one J or one J per instance");
    for (int j : votes_per_instance)
      if (j < 1)
        throw DomainError("J must be >= 1");
    if (labels && labels->size() != prior.dim())
      throw DomainError("label count does not match the prior dimension");
  }
};

struct SimulatedData {
  AnnotationDataset dataset;
  /// n x K latent embeddings used to generate each instance.
  Eigen::MatrixXd true_embeddings;
};

/// Per instance: z ~ N(mu, Sigma), pi ~ Dirichlet(exp z), y ~ Multinomial(J, pi).
/// Instance i draws from its own stream derived from (seed, i).
inline SimulatedData sample_dataset(const SimSpec &spec) {
  spec.validate();
  const std::size_t k = spec.prior.dim();
  const Eigen::MatrixXd lower = spec.prior.cholesky_lower();
  ClassLabels labels = spec.labels ? *spec.labels : ClassLabels::numbered(k);

  Eigen::MatrixXd truth(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(k));
  std::vector<Instance> instances;
  instances.reserve(spec.n);
  const int width = static_cast<int>(std::to_string(spec.n).size());
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng(derive_seed(spec.seed, {i}));
    const Eigen::VectorXd z = draw_mvn(rng, spec.prior.mu(), lower);
    const Eigen::VectorXd alpha = z.array().min(kZClamp).max(-kZClamp).exp();
    const Eigen::VectorXd pi = draw_dirichlet(rng, alpha);
    truth.row(static_cast<Eigen::Index>(i)) = z.transpose();

    std::string id = std::to_string(i + 1);
    id = "sim" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    instances.push_back({std::move(id), VoteCounts(draw_multinomial(rng, spec.votes_for(i), pi)), std::nullopt, {}});
  }
  return {AnnotationDataset(std::move(labels), std::move(instances)), std::move(truth)};
}

inline Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd> &z) {
  Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

struct RecoveryScore {
  /// sqrt(mean_k (mu_hat_k - mu_true_k)^2)
  double rmse_mu = 0.0;
  /// Per instance total-variation distance between softmax(z_true) and softmax(z_hat).
  std::vector<double> tv_distance;

  [[nodiscard]] double median_tv() const {
    if (tv_distance.empty())
      return 0.0;
    std::vector<double> v = tv_distance;
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    if (v.size() % 2 == 1)
      return v[mid];
    const double upper = v[mid];
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid) - 1, v.end());
    return 0.5 * (upper + v[mid - 1]);
  }
};

inline RecoveryScore recovery_score(const Eigen::VectorXd &true_mu, const Eigen::MatrixXd &true_embeddings,
                                    const Eigen::VectorXd &fitted_mu, const Eigen::MatrixXd &fitted_embeddings) {
  if (true_mu.size() != fitted_mu.size() || true_embeddings.rows() != fitted_embeddings.rows() ||
      true_embeddings.cols() != fitted_embeddings.cols() || true_embeddings.cols() != true_mu.size())
    throw DomainError("recovery_score shape mismatch");
  RecoveryScore s;
  s.rmse_mu = std::sqrt((fitted_mu - true_mu).squaredNorm() / static_cast<double>(true_mu.size()));
  s.tv_distance.reserve(static_cast<std::size_t>(true_embeddings.rows()));
  for (Eigen::Index i = 0; i < true_embeddings.rows(); ++i) {
    const Eigen::VectorXd a = softmax(true_embeddings.row(i).transpose());
    const Eigen::VectorXd b = softmax(fitted_embeddings.row(i).transpose());
    s.tv_distance.push_back(0.5 * (a - b).cwiseAbs().sum());
  }
  return s;
}

inline RecoveryScore recovery_score(const Eigen::VectorXd &true_mu, const Eigen::MatrixXd &true_embeddings,
                                    const FitResult &fit) {
  return recovery_score(true_mu, true_embeddings, fit.final_prior.mu(), fit.embeddings);
}

} // namespace embedgt
