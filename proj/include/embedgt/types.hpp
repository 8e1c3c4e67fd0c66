#pragma once

#include "embedgt/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace embedgt {

/// Latent embedded ground truth of one instance; alpha_k = exp(z_k).
using Embedding = Eigen::VectorXd;

/// Ordered, unique class names (K >= 2).
class ClassLabels {
public:
  ClassLabels() = default;

  explicit ClassLabels(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2)
      throw DomainError("at least two classes are required, got " +
                        std::to_string(names_.size()));
    std::unordered_set<std::string> seen;
    for (const auto &n : names_) {
      if (n.empty())
        throw DomainError("class names must be non-empty");
      if (!seen.insert(n).second)
        throw DomainError("duplicate class name '" + n + "'");
    }
  }

  /// Default names class1..classK.
  static ClassLabels numbered(std::size_t k) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i)
      names.push_back("class" + std::to_string(i + 1));
    return ClassLabels(std::move(names));
  }

  [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
  [[nodiscard]] const std::string &operator[](std::size_t k) const { return names_.at(k); }
  [[nodiscard]] const std::vector<std::string> &names() const noexcept { return names_; }

  [[nodiscard]] std::optional<std::size_t> index_of(const std::string &name) const {
    for (std::size_t k = 0; k < names_.size(); ++k)
      if (names_[k] == name)
        return k;
    return std::nullopt;
  }

  bool operator==(const ClassLabels &) const = default;

private:
  std::vector<std::string> names_;
};

/// Per-instance tally of annotations over K classes. Total J >= 1.
class VoteCounts {
public:
  VoteCounts() = default;

  explicit VoteCounts(std::vector<int> counts) : counts_(std::move(counts)) {
    if (counts_.empty())
      throw DomainError("vote vector is empty");
    long total = 0;
    for (int c : counts_) {
      if (c < 0)
        throw DomainError("negative vote count " + std::to_string(c));
      total += c;
    }
    if (total < 1)
      throw DomainError("vote vector has zero total");
    total_ = static_cast<int>(total);
  }

  VoteCounts(std::initializer_list<int> counts) : VoteCounts(std::vector<int>(counts)) {}

  [[nodiscard]] std::size_t size() const noexcept { return counts_.size(); }
  [[nodiscard]] int total() const noexcept { return total_; }
  [[nodiscard]] int operator[](std::size_t k) const { return counts_.at(k); }
  [[nodiscard]] const std::vector<int> &counts() const noexcept { return counts_; }

  bool operator==(const VoteCounts &) const = default;
  auto operator<=>(const VoteCounts &o) const { return counts_ <=> o.counts_; }

private:
  std::vector<int> counts_;
  int total_ = 0;
};

struct Instance {
  std::string id;
  VoteCounts votes;
  std::optional<std::size_t> gold;
  std::map<std::string, std::string> metadata;

  bool operator==(const Instance &) const = default;
};

/// Labelled instances sharing one class scheme.
class AnnotationDataset {
public:
  AnnotationDataset() = default;

  AnnotationDataset(ClassLabels labels, std::vector<Instance> instances)
      : labels_(std::move(labels)), instances_(std::move(instances)) {
    if (instances_.empty())
      throw DomainError("dataset has no instances");
    std::unordered_set<std::string> ids;
    for (const auto &inst : instances_) {
      if (inst.votes.size() != labels_.size())
        throw DomainError("instance '" + inst.id + "' has " +
                          std::to_string(inst.votes.size()) + " counts, expected " +
                          std::to_string(labels_.size()));
      if (!ids.insert(inst.id).second)
        throw DomainError("duplicate instance id '" + inst.id + "'");
      if (inst.gold && *inst.gold >= labels_.size())
        throw DomainError("instance '" + inst.id + "' has out-of-range gold label");
    }
  }

  [[nodiscard]] const ClassLabels &labels() const noexcept { return labels_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return labels_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return instances_.size(); }
  [[nodiscard]] const Instance &operator[](std::size_t i) const { return instances_.at(i); }
  [[nodiscard]] const std::vector<Instance> &instances() const noexcept { return instances_; }

  bool operator==(const AnnotationDataset &) const = default;

private:
  ClassLabels labels_;
  std::vector<Instance> instances_;
};

/// Mean and covariance of the Dirichlet class-probability vector pi | z.
struct DirichletMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Multivariate Gaussian prior N(mu, Sigma) with a cached Cholesky factor.
///
/// Construction symmetrizes Sigma and factorizes it. When the factorization
/// fails a diagonal jitter of 1e-8 * max(mean(diag Sigma), 1) is added, growing
/// tenfold per retry; after three failed retries a NumericalError is thrown.
class GaussianPrior {
public:
  static constexpr int kMaxJitterRetries = 3;
  static constexpr double kJitterScale = 1e-8;

  GaussianPrior() = default;

  GaussianPrior(Eigen::VectorXd mu, Eigen::MatrixXd sigma) : mu_(std::move(mu)) {
    const auto k = mu_.size();
    if (k < 1 || sigma.rows() != k || sigma.cols() != k)
      throw DomainError("prior dimension mismatch");
    if (!mu_.allFinite() || !sigma.allFinite())
      throw DomainError("prior parameters must be finite");
    sigma_ = 0.5 * (sigma + sigma.transpose());

    llt_.compute(sigma_);
    if (llt_.info() != Eigen::Success || !positive_pivots()) {
      const double base = kJitterScale * std::max(sigma_.diagonal().mean(), 1.0);
      bool ok = false;
      for (int attempt = 0; attempt < kMaxJitterRetries && !ok; ++attempt) {
        const double eps = base * std::pow(10.0, attempt);
        Eigen::MatrixXd jittered = sigma_;
        jittered.diagonal().array() += eps;
        llt_.compute(jittered);
        if (llt_.info() == Eigen::Success && positive_pivots()) {
          sigma_ = std::move(jittered);
          jitter_ = eps;
          ok = true;
        }
      }
      if (!ok)
        throw NumericalError("prior covariance is not positive definite after " +
                             std::to_string(kMaxJitterRetries) + " jitter retries");
    }
    log_det_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(mu_.size()); }
  [[nodiscard]] const Eigen::VectorXd &mu() const noexcept { return mu_; }
  [[nodiscard]] const Eigen::MatrixXd &sigma() const noexcept { return sigma_; }
  [[nodiscard]] Eigen::MatrixXd cholesky_lower() const { return llt_.matrixL(); }
  [[nodiscard]] double log_det() const noexcept { return log_det_; }
  /// Diagonal jitter that was added to make Sigma factorizable (0 if none).
  [[nodiscard]] double jitter() const noexcept { return jitter_; }

  /// (z - mu)' Sigma^{-1} (z - mu)
  [[nodiscard]] double mahalanobis_sq(const Eigen::Ref<const Eigen::VectorXd> &z) const {
    const Eigen::VectorXd w = llt_.matrixL().solve(z - mu_);
    return w.squaredNorm();
  }

  /// Normalized log density.
  [[nodiscard]] double log_density(const Eigen::Ref<const Eigen::VectorXd> &z) const {
    if (z.size() != mu_.size())
      throw DomainError("embedding dimension does not match prior");
    const double k = static_cast<double>(mu_.size());
    return -0.5 * (k * std::log(2.0 * std::numbers::pi) + log_det_ + mahalanobis_sq(z));
  }

private:
  bool positive_pivots() const {
    const Eigen::VectorXd d = llt_.matrixLLT().diagonal();
    return d.allFinite() && (d.array() > 0.0).all();
  }

  Eigen::VectorXd mu_;
  Eigen::MatrixXd sigma_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

} // namespace embedgt
