#pragma once

// Post-fit analytics: correlation ("generalized confusion") matrices and their
// MCMC spread, PCA biplot coordinates, concentration ellipses, vote summaries
// and annotation subsampling.

#include "embedgt/em.hpp"
#include "embedgt/error.hpp"
#include "embedgt/random.hpp"
#include "embedgt/types.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace embedgt {

struct CorrelationReport {
  Eigen::MatrixXd corr;
  Eigen::MatrixXd std;
  std::size_t n_instances = 0;
  std::size_t n_draw_slices = 0;
};

struct PcaResult {
  /// n x 2
  Eigen::MatrixXd scores;
  /// K x 2, components scaled by sqrt(eigenvalue)
  Eigen::MatrixXd loadings;
  Eigen::VectorXd explained_variance_ratio;
  Eigen::VectorXd center;
  /// Per-column divisor applied after centering (ones unless scaled).
  Eigen::VectorXd scale;
  /// K x K, all unit eigenvectors ordered by decreasing eigenvalue.
  Eigen::MatrixXd components;
  Eigen::VectorXd eigenvalues;
};

struct EllipseSpec {
  std::string group;
  Eigen::Vector2d center;
  /// Semi-axes, major first.
  Eigen::Vector2d axes;
  /// Direction of the major axis in radians, in (-pi/2, pi/2].
  double angle = 0.0;
  double coverage = 0.95;
};

namespace detail {

enum class ConstantColumn { Throw, ZeroCorrelation };

inline Eigen::MatrixXd weighted_correlation(const Eigen::MatrixXd &x, const std::vector<double> *weights,
                                            ConstantColumn policy, const ClassLabels *labels) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  auto w = [&](Eigen::Index i) { return weights ? (*weights)[static_cast<std::size_t>(i)] : 1.0; };

  double total = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    mean += w(i) * x.row(i).transpose();
    total += w(i);
  }
  mean /= total;

  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd d = x.row(i).transpose() - mean;
    cross.noalias() += w(i) * d * d.transpose();
  }

  std::vector<bool> constant(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    constant[static_cast<std::size_t>(c)] = x.col(c).maxCoeff() == x.col(c).minCoeff();
    if (constant[static_cast<std::size_t>(c)] && policy == ConstantColumn::Throw) {
      const std::string name = labels && static_cast<std::size_t>(c) < labels->size()
                                   ? (*labels)[static_cast<std::size_t>(c)]
                                   : "column " + std::to_string(c + 1);
      throw DomainError("embedding dimension '" + name + "' is constant; its correlations are undefined");
    }
  }

  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      double r = 0.0;
      if (!constant[static_cast<std::size_t>(a)] && !constant[static_cast<std::size_t>(b)])
        r = std::clamp(cross(a, b) / std::sqrt(cross(a, a) * cross(b, b)), -1.0, 1.0);
      corr(a, b) = corr(b, a) = r;
    }
  }
  return corr;
}

} // namespace detail

/// Pearson correlation between embedding dimensions across instances.
inline Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd &embeddings, const ClassLabels *labels = nullptr) {
  if (embeddings.rows() < 3)
    throw DomainError("correlation matrix needs at least three instances");
  return detail::weighted_correlation(embeddings, nullptr, detail::ConstantColumn::Throw, labels);
}

/// Correlation over distinct rows weighted by multiplicity; equals
/// correlation_matrix() of the expanded rows.
inline Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd &rows, const std::vector<double> &weights,
                                          const ClassLabels *labels = nullptr) {
  if (static_cast<std::size_t>(rows.rows()) != weights.size())
    throw DomainError("row and weight counts differ");
  double total = 0.0;
  for (double w : weights)
    total += w;
  if (total < 3.0)
    throw DomainError("correlation matrix needs at least three instances");
  return detail::weighted_correlation(rows, &weights, detail::ConstantColumn::Throw, labels);
}

namespace detail {

/// Entrywise sample standard deviation (divisor S - 1) of per-slice correlation
/// matrices; slice s pairs the s-th retained draw of every row source.
template <typename SliceFn>
Eigen::MatrixXd slice_correlation_std(std::size_t slices, Eigen::Index k, SliceFn &&slice,
                                      const std::vector<double> *weights) {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(k, k);
  std::vector<Eigen::MatrixXd> per_slice;
  per_slice.reserve(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    per_slice.push_back(weighted_correlation(slice(s), weights, ConstantColumn::ZeroCorrelation, nullptr));
    sum += per_slice.back();
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, k);
  if (slices < 2)
    return out;
  const Eigen::MatrixXd mean = sum / static_cast<double>(slices);
  for (const auto &c : per_slice)
    sum_sq += (c - mean).cwiseAbs2();
  out = (sum_sq / static_cast<double>(slices - 1)).cwiseSqrt();
  out.diagonal().setZero();
  return out;
}

} // namespace detail

/// Spread of the correlation matrix across retained MCMC draws.
/// `per_instance[i]` is the n_retained x K draw matrix of instance i.
inline Eigen::MatrixXd correlation_std(const std::vector<Eigen::MatrixXd> &per_instance) {
  if (per_instance.size() < 3)
    throw DomainError("correlation_std needs at least three instances");
  const auto slices = per_instance.front().rows();
  const auto k = per_instance.front().cols();
  for (const auto &d : per_instance)
    if (d.rows() != slices || d.cols() != k)
      throw DomainError("instances have unequal numbers of retained draws");
  Eigen::MatrixXd buf(static_cast<Eigen::Index>(per_instance.size()), k);
  return detail::slice_correlation_std(
      static_cast<std::size_t>(slices), k,
      [&](std::size_t s) -> const Eigen::MatrixXd & {
        for (std::size_t i = 0; i < per_instance.size(); ++i)
          buf.row(static_cast<Eigen::Index>(i)) = per_instance[i].row(static_cast<Eigen::Index>(s));
        return buf;
      },
      nullptr);
}

/// correlation_std over a fit's final draws, weighting shared vote patterns.
inline Eigen::MatrixXd correlation_std(const FitResult &fit) {
  if (fit.size() < 3)
    throw DomainError("correlation_std needs at least three instances");
  const std::size_t np = fit.pattern_draws.size();
  const auto slices = fit.pattern_draws.front().draws.rows();
  const auto k = fit.pattern_draws.front().draws.cols();
  std::vector<double> weights(np);
  for (std::size_t p = 0; p < np; ++p) {
    if (fit.pattern_draws[p].draws.rows() != slices)
      throw DomainError("instances have unequal numbers of retained draws");
    weights[p] = static_cast<double>(fit.pattern_multiplicity[p]);
  }
  Eigen::MatrixXd buf(static_cast<Eigen::Index>(np), k);
  return detail::slice_correlation_std(
      static_cast<std::size_t>(slices), k,
      [&](std::size_t s) -> const Eigen::MatrixXd & {
        for (std::size_t p = 0; p < np; ++p)
          buf.row(static_cast<Eigen::Index>(p)) = fit.pattern_draws[p].draws.row(static_cast<Eigen::Index>(s));
        return buf;
      },
      &weights);
}

inline CorrelationReport correlation_report(const FitResult &fit) {
  CorrelationReport r;
  r.corr = correlation_matrix(fit.embeddings, &fit.labels);
  r.std = correlation_std(fit);
  r.n_instances = fit.size();
  r.n_draw_slices = fit.pattern_draws.empty() ? 0 : fit.pattern_draws.front().size();
  return r;
}

/// Covariance PCA (or correlation PCA when `scale` is set) with the first two
/// components exported for a biplot. Each component's largest-magnitude entry
/// is made positive.
inline PcaResult pca_biplot(const Eigen::MatrixXd &data, bool scale = false) {
  const Eigen::Index n = data.rows();
  const Eigen::Index k = data.cols();
  if (n <= 2)
    throw DomainError("PCA needs more than two instances");
  if (k < 2)
    throw DomainError("PCA needs at least two dimensions");

  PcaResult r;
  r.center = data.colwise().mean().transpose();
  Eigen::MatrixXd x = data.rowwise() - r.center.transpose();
  r.scale = Eigen::VectorXd::Ones(k);
  if (scale) {
    for (Eigen::Index c = 0; c < k; ++c) {
      const double sd = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(n - 1));
      if (!(sd > 0.0))
        throw DomainError("cannot scale a constant column in PCA");
      r.scale[c] = sd;
      x.col(c) /= sd;
    }
  }

  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw NumericalError("PCA eigendecomposition failed");

  r.eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  r.components = eig.eigenvectors().rowwise().reverse();
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    r.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (r.components(arg, c) < 0.0)
      r.components.col(c) *= -1.0;
  }

  const double total = r.eigenvalues.sum();
  if (!(total > 0.0) || r.eigenvalues[1] <= 1e-12 * r.eigenvalues[0])
    throw DomainError("embeddings have rank < 2; no two-dimensional projection exists");
  r.explained_variance_ratio = r.eigenvalues.head(std::min(n, k)) / total;

  r.scores = x * r.components.leftCols(2);
  r.loadings = r.components.leftCols(2) * r.eigenvalues.head(2).cwiseSqrt().asDiagonal();
  return r;
}

/// Gaussian concentration ellipse of a 2-D point cloud covering `coverage`
/// probability mass: semi-axes sqrt(chi2_2(coverage) * eigenvalue).
inline EllipseSpec concentration_ellipse(const Eigen::MatrixXd &scores, double coverage = 0.95,
                                         std::string group = {}) {
  if (scores.cols() != 2)
    throw DomainError("concentration ellipse needs two-column scores");
  if (scores.rows() < 3)
    throw DomainError("concentration ellipse needs at least three points");
  if (!(coverage > 0.0 && coverage < 1.0))
    throw DomainError("coverage must lie in (0, 1)");

  EllipseSpec e;
  e.group = std::move(group);
  e.coverage = coverage;
  e.center = scores.colwise().mean().transpose();
  const Eigen::MatrixXd centered = scores.rowwise() - e.center.transpose();
  const Eigen::Matrix2d cov = centered.transpose() * centered / static_cast<double>(scores.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d lambda = eig.eigenvalues();
  if (!(lambda[0] > 1e-12 * std::max(lambda[1], 1e-300)))
    throw DomainError("group '" + e.group + "' has a singular 2-D covariance");

  const double q = boost::math::quantile(boost::math::chi_squared(2.0), coverage);
  e.axes << std::sqrt(q * lambda[1]), std::sqrt(q * lambda[0]);
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  double angle = std::atan2(major[1], major[0]);
  if (angle <= -std::numbers::pi / 2)
    angle += std::numbers::pi;
  else if (angle > std::numbers::pi / 2)
    angle -= std::numbers::pi;
  e.angle = angle;
  return e;
}

/// One ellipse per group label (in first-appearance order); groups with fewer
/// than three points or a singular spread are skipped.
inline std::vector<EllipseSpec> group_ellipses(const Eigen::MatrixXd &scores, const std::vector<std::string> &groups,
                                               double coverage = 0.95) {
  if (static_cast<std::size_t>(scores.rows()) != groups.size())
    throw DomainError("scores and group labels differ in length");
  std::vector<std::string> order;
  for (const auto &g : groups)
    if (std::find(order.begin(), order.end(), g) == order.end())
      order.push_back(g);
  std::vector<EllipseSpec> out;
  for (const auto &g : order) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i] == g)
        rows.push_back(static_cast<Eigen::Index>(i));
    if (rows.size() < 3)
      continue;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t r = 0; r < rows.size(); ++r)
      sub.row(static_cast<Eigen::Index>(r)) = scores.row(rows[r]);
    try {
      out.push_back(concentration_ellipse(sub, coverage, g));
    } catch (const DomainError &) {
    }
  }
  return out;
}

struct MajorityVote {
  std::size_t index = 0;
  bool tie = false;
};

/// argmax of the counts; ties go to the lowest class index and set `tie`.
inline MajorityVote majority_vote(const VoteCounts &votes) {
  MajorityVote mv;
  int best = -1;
  for (std::size_t k = 0; k < votes.size(); ++k) {
    if (votes[k] > best) {
      best = votes[k];
      mv.index = k;
      mv.tie = false;
    } else if (votes[k] == best) {
      mv.tie = true;
    }
  }
  return mv;
}

struct AgreementStats {
  double full_agreement_fraction = 0.0;
  std::size_t distinct_patterns = 0;
  std::vector<std::size_t> majority_counts;
  std::size_t majority_ties = 0;
};

inline AgreementStats agreement_stats(const AnnotationDataset &data) {
  AgreementStats s;
  s.majority_counts.assign(data.num_classes(), 0);
  std::set<VoteCounts> patterns;
  std::size_t unanimous = 0;
  for (const auto &inst : data.instances()) {
    patterns.insert(inst.votes);
    const auto mv = majority_vote(inst.votes);
    ++s.majority_counts[mv.index];
    s.majority_ties += mv.tie ? 1 : 0;
    if (inst.votes[mv.index] == inst.votes.total())
      ++unanimous;
  }
  s.full_agreement_fraction = static_cast<double>(unanimous) / static_cast<double>(data.size());
  s.distinct_patterns = patterns.size();
  return s;
}

struct CohortPlan {
  std::size_t n_instances = 0;
  int j_target = 0;
};

/// Draw `j_target` of an instance's ballots without replacement.
inline VoteCounts thin_votes(const VoteCounts &votes, int j_target, Rng &rng) {
  if (j_target < 1)
    throw DomainError("subsample target must be >= 1");
  if (j_target > votes.total())
    throw DomainError("cannot subsample " + std::to_string(j_target) + " annotations from " +
                      std::to_string(votes.total()));
  std::vector<int> ballots;
  ballots.reserve(static_cast<std::size_t>(votes.total()));
  for (std::size_t k = 0; k < votes.size(); ++k)
    ballots.insert(ballots.end(), static_cast<std::size_t>(votes[k]), static_cast<int>(k));
  std::vector<int> out(votes.size(), 0);
  const auto total = ballots.size();
  for (std::size_t t = 0; t < static_cast<std::size_t>(j_target); ++t) {
    const auto pick = boost::random::uniform_int_distribution<std::size_t>{t, total - 1}(rng);
    std::swap(ballots[t], ballots[pick]);
    ++out[static_cast<std::size_t>(ballots[t])];
  }
  return VoteCounts(std::move(out));
}

/// Split the dataset into random cohorts and thin each cohort's votes to its
/// target J. Instance order is preserved; each instance gains a `J_group` tag.
inline AnnotationDataset subsample_annotations(const AnnotationDataset &data, const std::vector<CohortPlan> &plan,
                                               std::uint64_t seed) {
  std::size_t planned = 0;
  for (const auto &c : plan) {
    if (c.j_target < 1)
      throw DomainError("cohort J must be >= 1");
    planned += c.n_instances;
  }
  if (planned != data.size())
    throw DomainError("cohort sizes sum to " + std::to_string(planned) + " but the dataset has " +
                      std::to_string(data.size()) + " instances");

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = i;
  Rng shuffle_rng(derive_seed(seed, {0}));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = boost::random::uniform_int_distribution<std::size_t>{0, i - 1}(shuffle_rng);
    std::swap(order[i - 1], order[j]);
  }

  std::vector<int> target(data.size());
  std::size_t pos = 0;
  for (const auto &c : plan)
    for (std::size_t r = 0; r < c.n_instances; ++r)
      target[order[pos++]] = c.j_target;

  std::vector<Instance> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Instance inst = data[i];
    Rng rng(derive_seed(seed, {1, i}));
    inst.votes = thin_votes(inst.votes, target[i], rng);
    inst.metadata["J_group"] = std::to_string(target[i]);
    out.push_back(std::move(inst));
  }
  return AnnotationDataset(data.labels(), std::move(out));
}

} // namespace embedgt
