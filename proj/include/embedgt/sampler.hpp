#pragma once

#include "embedgt/error.hpp"
#include "embedgt/random.hpp"
#include "embedgt/types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <utility>

namespace embedgt {

/// Random-walk Metropolis settings. Defaults reproduce the reference runs
/// (1000 retained draws, burn-in 50, thinning 20). A sturdier profile for
/// real data is burn_in = 500, thin = 5.
struct McmcConfig {
  std::size_t n_retained = 1000;
  std::size_t burn_in = 50;
  std::size_t thin = 20;
  /// Per-dimension standard deviation of the Gaussian proposal.
  double proposal_scale = 0.5;
  /// Tune proposal_scale during burn-in only.
  bool adapt = true;
  std::uint64_t seed = 0;

  static constexpr double kTargetAcceptance = 0.234;

  void validate() const {
    if (n_retained < 1)
      throw DomainError("n_retained must be >= 1");
    if (thin < 1)
      throw DomainError("thin must be >= 1");
    if (!(proposal_scale > 0.0) || !std::isfinite(proposal_scale))
      throw DomainError("proposal_scale must be positive and finite");
  }
};

struct PosteriorDraws {
  /// n_retained x K
  Eigen::MatrixXd draws;
  /// Fraction of accepted proposals after burn-in.
  double acceptance_rate = 0.0;
  std::uint64_t seed_used = 0;
  /// Proposal scale in force after burn-in (differs from the config when adapting).
  double final_proposal_scale = 0.0;
  /// Acceptance rate fell outside [0.05, 0.95].
  bool acceptance_warning = false;

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(draws.rows()); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(draws.cols()); }
};

template <typename F>
concept LogDensity = requires(F f, const Eigen::VectorXd &z) {
  { f(z) } -> std::convertible_to<double>;
};

/// Random-walk Metropolis with Gaussian proposals z' = z + scale * F e,
/// e ~ N(0, I). `proposal_factor` is F (K x K); pass an empty matrix for the
/// isotropic walk F = I.
///
/// Runs burn_in + n_retained * thin steps and keeps every thin-th state after
/// burn-in. When adapting, the log proposal scale follows a Robbins-Monro
/// recursion toward 0.234 acceptance during burn-in and is frozen afterwards.
template <LogDensity Target>
PosteriorDraws rw_metropolis(Target &&target, const Eigen::Ref<const Eigen::VectorXd> &init,
                             const McmcConfig &config, const Eigen::MatrixXd &proposal_factor) {
  config.validate();
  const Eigen::Index k = init.size();
  if (k < 1)
    throw DomainError("initial state is empty");
  if (!init.allFinite())
    throw DomainError("initial state is not finite");
  const bool shaped = proposal_factor.size() > 0;
  if (shaped && (proposal_factor.rows() != k || proposal_factor.cols() != k || !proposal_factor.allFinite()))
    throw DomainError("proposal factor must be a finite K x K matrix");

  Eigen::VectorXd current = init;
  double current_lp = target(current);
  if (!std::isfinite(current_lp))
    throw DomainError("target log density is not finite at the initial state");

  Rng rng(config.seed);
  Eigen::VectorXd proposal(k);
  Eigen::VectorXd noise(k);
  double log_scale = std::log(config.proposal_scale);
  double scale = config.proposal_scale;

  bool last_accepted = false;
  auto step = [&]() -> double {
    for (Eigen::Index j = 0; j < k; ++j)
      noise[j] = draw_normal(rng);
    if (shaped)
      proposal.noalias() = current + scale * (proposal_factor * noise);
    else
      proposal.noalias() = current + scale * noise;
    const double lp = target(proposal);
    const double log_ratio = lp - current_lp;
    double accept_prob = 0.0;
    if (std::isfinite(lp))
      accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
    last_accepted = accept_prob >= 1.0 || draw_uniform(rng) < accept_prob;
    if (last_accepted) {
      current.swap(proposal);
      current_lp = lp;
    }
    return accept_prob;
  };

  for (std::size_t t = 0; t < config.burn_in; ++t) {
    const double a = step();
    if (config.adapt) {
      const double gain = 1.0 / std::pow(static_cast<double>(t) + 1.0, 0.6);
      log_scale = std::clamp(log_scale + gain * (a - McmcConfig::kTargetAcceptance), -20.0, 5.0);
      scale = std::exp(log_scale);
    }
  }

  PosteriorDraws out;
  out.draws.resize(static_cast<Eigen::Index>(config.n_retained), k);
  out.seed_used = config.seed;
  out.final_proposal_scale = scale;

  std::size_t accepted = 0;
  std::size_t total = 0;
  for (std::size_t r = 0; r < config.n_retained; ++r) {
    for (std::size_t t = 0; t < config.thin; ++t) {
      step();
      accepted += last_accepted ? 1 : 0;
      ++total;
    }
    out.draws.row(static_cast<Eigen::Index>(r)) = current.transpose();
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
  out.acceptance_warning = out.acceptance_rate < 0.05 || out.acceptance_rate > 0.95;
  return out;
}

template <LogDensity Target>
PosteriorDraws rw_metropolis(Target &&target, const Eigen::Ref<const Eigen::VectorXd> &init,
                             const McmcConfig &config) {
  return rw_metropolis(std::forward<Target>(target), init, config, Eigen::MatrixXd{});
}

/// Column-wise mean of the retained draws.
inline Embedding posterior_mean(const PosteriorDraws &d) {
  if (d.size() == 0)
    throw DomainError("posterior mean of an empty draw set");
  return d.draws.colwise().mean().transpose();
}

/// Unbiased (n - 1) sample covariance of the retained draws.
inline Eigen::MatrixXd posterior_covariance(const PosteriorDraws &d) {
  if (d.size() < 2)
    throw DomainError("posterior covariance needs at least two draws");
  const Eigen::RowVectorXd mean = d.draws.colwise().mean();
  const Eigen::MatrixXd centered = d.draws.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(d.size() - 1);
  return 0.5 * (cov + cov.transpose());
}

} // namespace embedgt
