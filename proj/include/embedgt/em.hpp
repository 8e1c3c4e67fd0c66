#pragma once

// Stochastic EM for the embedding model: a Metropolis E-step per distinct vote
// pattern followed by an empirical-Bayes update of the Gaussian prior.

#include "embedgt/error.hpp"
#include "embedgt/kernels.hpp"
#include "embedgt/random.hpp"
#include "embedgt/sampler.hpp"
#include "embedgt/types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

namespace embedgt {

enum class MStep {
  /// Moments of the per-instance posterior means.
  PosteriorMeans,
  /// Moments of all retained draws pooled across instances.
  FullDraws,
};

enum class ProposalShape {
  /// Inverse negative Hessian at the posterior mode (Laplace approximation).
  Laplace,
  /// Identity: plain isotropic random walk.
  Isotropic,
};

struct EmConfig {
  std::size_t max_iterations = 50;
  std::size_t min_iterations = 5;
  /// Relative change in mu and in ||Sigma||_F below which an iteration counts as stable.
  double rel_tol = 1e-3;
  /// Consecutive stable iterations required to stop.
  std::size_t stable_iterations = 2;
  MStep m_step = MStep::PosteriorMeans;
  ProposalShape proposal = ProposalShape::Laplace;
  McmcConfig mcmc;
  /// E-step threads; 0 picks std::thread::hardware_concurrency(). Never affects results.
  std::size_t workers = 1;

  void validate() const {
    if (max_iterations < 1)
      throw DomainError("max_iterations must be >= 1");
    if (min_iterations > max_iterations)
      throw DomainError("min_iterations must not exceed max_iterations");
    if (!(rel_tol > 0.0))
      throw DomainError("rel_tol must be positive");
    if (stable_iterations < 1)
      throw DomainError("stable_iterations must be >= 1");
    mcmc.validate();
  }
};

struct IterationRecord {
  std::size_t iteration = 0;
  /// Prior mean after this iteration's update.
  Eigen::VectorXd mu;
  double sigma_frobenius = 0.0;
  double mean_acceptance = 0.0;
  double mu_change = 0.0;
  double sigma_change = 0.0;
  std::size_t clamp_events = 0;
  std::size_t acceptance_warnings = 0;
};

struct FitResult {
  ClassLabels labels;
  std::vector<std::string> instance_ids;
  /// n x K posterior means from the last E-step.
  Eigen::MatrixXd embeddings;
  GaussianPrior final_prior;
  /// Distinct vote patterns in sorted order; instance i uses pattern_of[i].
  std::vector<VoteCounts> patterns;
  std::vector<std::size_t> pattern_of;
  std::vector<std::size_t> pattern_multiplicity;
  /// Per pattern, last iteration.
  std::vector<PosteriorDraws> pattern_draws;
  std::vector<Eigen::MatrixXd> pattern_cov;
  std::vector<IterationRecord> history;
  std::size_t iterations_run = 0;
  bool converged = false;

  [[nodiscard]] std::size_t size() const noexcept { return pattern_of.size(); }
  [[nodiscard]] Embedding embedding(std::size_t i) const { return embeddings.row(static_cast<Eigen::Index>(i)).transpose(); }
  [[nodiscard]] const PosteriorDraws &draws(std::size_t i) const { return pattern_draws.at(pattern_of.at(i)); }
  [[nodiscard]] const Eigen::MatrixXd &covariance(std::size_t i) const { return pattern_cov.at(pattern_of.at(i)); }
};

/// mu = 0, Sigma = 10 I.
inline GaussianPrior init_prior(std::size_t k) {
  if (k < 2)
    throw DomainError("init_prior needs K >= 2");
  const auto n = static_cast<Eigen::Index>(k);
  return GaussianPrior(Eigen::VectorXd::Zero(n), 10.0 * Eigen::MatrixXd::Identity(n, n));
}

namespace detail {

/// Weighted ML moments (divisor = total weight), accumulated in row order.
inline GaussianPrior weighted_prior(const Eigen::MatrixXd &rows, const std::vector<double> &weights) {
  const Eigen::Index k = rows.cols();
  double total = 0.0;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    mu += weights[static_cast<std::size_t>(i)] * rows.row(i).transpose();
    total += weights[static_cast<std::size_t>(i)];
  }
  mu /= total;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd d = rows.row(i).transpose() - mu;
    sigma += weights[static_cast<std::size_t>(i)] * d * d.transpose();
  }
  sigma /= total;
  return GaussianPrior(std::move(mu), std::move(sigma));
}

inline std::size_t resolve_workers(std::size_t requested) {
  if (requested == 0)
    requested = std::max(1u, std::thread::hardware_concurrency());
  return requested;
}

/// Runs job(i) for i in [0, count) on `workers` threads; the first failure by
/// index is rethrown after all threads join.
template <typename Job>
void parallel_for(std::size_t count, std::size_t workers, Job &&job) {
  workers = std::min(resolve_workers(workers), std::max<std::size_t>(count, 1));
  std::vector<std::exception_ptr> errors(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

/// Posterior mode by damped Newton from `start`.
inline Eigen::VectorXd posterior_mode(const VoteCounts &y, const GaussianPrior &prior,
                                      const Eigen::VectorXd &start) {
  Eigen::VectorXd z = start;
  auto d = log_posterior_derivatives(z, y, prior);
  for (int it = 0; it < 100; ++it) {
    const Eigen::MatrixXd neg_h = -d.hessian;
    double lambda = 0.0;
    bool moved = false;
    Eigen::VectorXd step;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::MatrixXd a = neg_h;
      a.diagonal().array() += lambda;
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(d.gradient);
        const Eigen::VectorXd candidate = (z + step).cwiseMax(-kZClamp).cwiseMin(kZClamp);
        const double lp = log_posterior(candidate, y, prior);
        if (std::isfinite(lp) && lp >= d.value - 1e-12) {
          z = candidate;
          d = log_posterior_derivatives(z, y, prior);
          moved = true;
          break;
        }
      }
      lambda = lambda == 0.0 ? 1e-4 * std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff()) : 10.0 * lambda;
    }
    if (!moved || step.lpNorm<Eigen::Infinity>() < 1e-9 || d.gradient.lpNorm<Eigen::Infinity>() < 1e-10)
      break;
  }
  return z;
}

/// Proposal factor F with F F' = (-H)^{-1} at the posterior mode; falls back
/// to the prior's Cholesky factor when -H is not positive definite there.
inline Eigen::MatrixXd laplace_proposal_factor(const VoteCounts &y, const GaussianPrior &prior,
                                               const Eigen::VectorXd &start) {
  const Eigen::VectorXd mode = posterior_mode(y, prior, start);
  const Eigen::MatrixXd neg_h = -log_posterior_derivatives(mode, y, prior).hessian;
  Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all())
    return prior.cholesky_lower();
  const Eigen::Index k = neg_h.rows();
  Eigen::MatrixXd factor = llt.matrixU().solve(Eigen::MatrixXd::Identity(k, k));
  if (!factor.allFinite())
    return prior.cholesky_lower();
  return factor;
}

inline Eigen::MatrixXd proposal_factor(ProposalShape shape, const VoteCounts &y, const GaussianPrior &prior,
                                       const Eigen::VectorXd &start) {
  return shape == ProposalShape::Laplace ? laplace_proposal_factor(y, prior, start) : Eigen::MatrixXd{};
}

inline double relative_change(double delta, double reference) { return delta / std::max(1.0, reference); }

} // namespace detail

/// Maximum-likelihood Gaussian fit (divisor n) to a set of embeddings.
inline GaussianPrior update_prior(const std::vector<Embedding> &estimates) {
  if (estimates.size() < 2)
    throw DomainError("update_prior needs at least two estimates");
  const Eigen::Index k = estimates.front().size();
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(estimates.size()), k);
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].size() != k)
      throw DomainError("estimates differ in dimension");
    rows.row(static_cast<Eigen::Index>(i)) = estimates[i].transpose();
  }
  return detail::weighted_prior(rows, std::vector<double>(estimates.size(), 1.0));
}

struct InstanceEmbedding {
  Embedding mean;
  Eigen::MatrixXd cov;
  PosteriorDraws draws;
};

/// One E-step for a single instance against a frozen prior. The chain starts
/// at the prior mean and uses mcmc.seed directly.
inline InstanceEmbedding embed_new_instance(const VoteCounts &votes, const GaussianPrior &prior,
                                            const McmcConfig &mcmc,
                                            ProposalShape shape = ProposalShape::Laplace) {
  if (votes.size() != prior.dim())
    throw DomainError("vote vector length does not match the prior");
  InstancePosterior target(votes, prior);
  auto draws = rw_metropolis(target, prior.mu(), mcmc, detail::proposal_factor(shape, votes, prior, prior.mu()));
  Embedding mean = posterior_mean(draws);
  const auto k = static_cast<Eigen::Index>(votes.size());
  Eigen::MatrixXd cov = draws.size() >= 2 ? posterior_covariance(draws) : Eigen::MatrixXd::Zero(k, k);
  return {std::move(mean), std::move(cov), std::move(draws)};
}

using IterationObserver = std::function<void(const IterationRecord &)>;

/// Stochastic EM fit of per-instance embeddings and the shared prior.
///
/// Instances with identical vote vectors share one chain; the chain seed is
/// derived from (config.mcmc.seed, iteration, vote pattern), so results do not
/// depend on instance order or on the number of workers.
inline FitResult fit(const AnnotationDataset &data, const EmConfig &config,
                     const IterationObserver &observer = {}) {
  config.validate();
  const std::size_t n = data.size();
  const std::size_t k = data.num_classes();
  if (n < 2)
    throw DomainError("fit needs at least two instances");
  const auto kk = static_cast<Eigen::Index>(k);

  FitResult out;
  out.labels = data.labels();
  out.pattern_of.resize(n);
  {
    std::map<VoteCounts, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i)
      index.emplace(data[i].votes, 0);
    for (auto &[y, p] : index) {
      p = out.patterns.size();
      out.patterns.push_back(y);
    }
    out.pattern_multiplicity.assign(out.patterns.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t p = index.at(data[i].votes);
      out.pattern_of[i] = p;
      ++out.pattern_multiplicity[p];
      out.instance_ids.push_back(data[i].id);
    }
  }
  const std::size_t n_patterns = out.patterns.size();
  std::vector<std::uint64_t> keys(n_patterns);
  std::vector<double> weights(n_patterns);
  for (std::size_t p = 0; p < n_patterns; ++p) {
    keys[p] = pattern_key(out.patterns[p]);
    weights[p] = static_cast<double>(out.pattern_multiplicity[p]);
  }

  GaussianPrior prior = init_prior(k);
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_patterns), kk);
  std::vector<PosteriorDraws> draws(n_patterns);
  std::vector<std::size_t> clamps(n_patterns);
  std::size_t stable = 0;

  for (std::size_t m = 1; m <= config.max_iterations; ++m) {
    detail::parallel_for(n_patterns, config.workers, [&](std::size_t p) {
      McmcConfig mc = config.mcmc;
      mc.seed = derive_seed(config.mcmc.seed, {m, keys[p]});
      InstancePosterior target(out.patterns[p], prior);
      const Eigen::VectorXd init = means.row(static_cast<Eigen::Index>(p)).transpose();
      draws[p] = rw_metropolis(target, init, mc, detail::proposal_factor(config.proposal, out.patterns[p], prior, init));
      means.row(static_cast<Eigen::Index>(p)) = draws[p].draws.colwise().mean();
      clamps[p] = target.diagnostics().clamp_events;
    });

    IterationRecord rec;
    rec.iteration = m;
    for (std::size_t p = 0; p < n_patterns; ++p) {
      rec.mean_acceptance += weights[p] * draws[p].acceptance_rate;
      rec.clamp_events += clamps[p];
      rec.acceptance_warnings += draws[p].acceptance_warning ? out.pattern_multiplicity[p] : 0;
    }
    rec.mean_acceptance /= static_cast<double>(n);

    GaussianPrior next;
    try {
      if (config.m_step == MStep::PosteriorMeans) {
        next = detail::weighted_prior(means, weights);
      } else {
        const auto s = static_cast<Eigen::Index>(config.mcmc.n_retained);
        Eigen::MatrixXd pooled(static_cast<Eigen::Index>(n_patterns) * s, kk);
        std::vector<double> pooled_w(static_cast<std::size_t>(pooled.rows()));
        for (std::size_t p = 0; p < n_patterns; ++p) {
          const auto off = static_cast<Eigen::Index>(p) * s;
          pooled.middleRows(off, s) = draws[p].draws;
          std::fill_n(pooled_w.begin() + off, s, weights[p]);
        }
        next = detail::weighted_prior(pooled, pooled_w);
      }
    } catch (const NumericalError &e) {
      throw NumericalError("prior update failed at iteration " + std::to_string(m) + ": " + e.what());
    }

    rec.mu_change = detail::relative_change((next.mu() - prior.mu()).norm(), prior.mu().norm());
    rec.sigma_change = detail::relative_change((next.sigma() - prior.sigma()).norm(), prior.sigma().norm());
    rec.mu = next.mu();
    rec.sigma_frobenius = next.sigma().norm();
    prior = std::move(next);
    out.history.push_back(rec);
    out.iterations_run = m;
    if (observer)
      observer(rec);

    stable = (rec.mu_change < config.rel_tol && rec.sigma_change < config.rel_tol) ? stable + 1 : 0;
    if (stable >= config.stable_iterations && m >= config.min_iterations) {
      out.converged = true;
      break;
    }
  }

  out.final_prior = std::move(prior);
  out.embeddings.resize(static_cast<Eigen::Index>(n), kk);
  for (std::size_t i = 0; i < n; ++i)
    out.embeddings.row(static_cast<Eigen::Index>(i)) = means.row(static_cast<Eigen::Index>(out.pattern_of[i]));
  out.pattern_cov.reserve(n_patterns);
  for (const auto &d : draws)
    out.pattern_cov.push_back(d.size() >= 2 ? posterior_covariance(d) : Eigen::MatrixXd::Zero(kk, kk));
  out.pattern_draws = std::move(draws);
  return out;
}

} // namespace embedgt
