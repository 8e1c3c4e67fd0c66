#pragma once

// Closed-form probability kernels of the Dirichlet-Multinomial embedding model.
// Everything is evaluated in log space through log-gamma; Gamma and Beta
// functions are never formed directly.

#include "embedgt/error.hpp"
#include "embedgt/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

namespace embedgt {

/// Embedding entries are clamped to [-kZClamp, kZClamp] before exponentiation.
inline constexpr double kZClamp = 30.0;

/// Optional sink for non-fatal kernel events.
struct KernelDiagnostics {
  std::size_t clamp_events = 0;
};

namespace detail {

/// Reentrant log|Gamma(x)|; std::lgamma writes the global signgam.
inline double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

inline double clamp_z(double z, KernelDiagnostics *diag) {
  if (z > kZClamp || z < -kZClamp) {
    if (diag)
      ++diag->clamp_events;
    return std::clamp(z, -kZClamp, kZClamp);
  }
  return z;
}

inline void require_finite(const Eigen::Ref<const Eigen::VectorXd> &z) {
  if (!z.allFinite())
    throw DomainError("embedding contains non-finite entries");
}

/// log(J! / prod y_k!)
inline double log_multinomial_coefficient(const VoteCounts &y) {
  double out = log_gamma(y.total() + 1.0);
  for (int c : y.counts())
    out -= log_gamma(c + 1.0);
  return out;
}

/// log B(alpha + y) - log B(alpha) with alpha = exp(clamp(z)); no coefficient.
inline double log_dm_ratio(const std::vector<int> &y, int total,
                           const Eigen::Ref<const Eigen::VectorXd> &z,
                           KernelDiagnostics *diag) {
  double alpha0 = 0.0;
  double out = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double a = std::exp(clamp_z(z[k], diag));
    alpha0 += a;
    const int yk = y[static_cast<std::size_t>(k)];
    if (yk > 0)
      out += log_gamma(a + yk) - log_gamma(a);
  }
  return out + log_gamma(alpha0) - log_gamma(alpha0 + total);
}

} // namespace detail

/// log P(Y = y | z) of the Beta-Binomial with alpha = exp(z1), beta = exp(z2).
inline double log_beta_binomial_marginal(int y, int trials,
                                         const Eigen::Ref<const Eigen::VectorXd> &z,
                                         KernelDiagnostics *diag = nullptr) {
  if (trials < 1)
    throw DomainError("number of trials must be >= 1");
  if (y < 0 || y > trials)
    throw DomainError("successes must lie in [0, trials]");
  if (z.size() != 2)
    throw DomainError("beta-binomial embedding must have two entries");
  detail::require_finite(z);

  using detail::log_gamma;
  const double a = std::exp(detail::clamp_z(z[0], diag));
  const double b = std::exp(detail::clamp_z(z[1], diag));
  const double log_choose =
      log_gamma(trials + 1.0) - log_gamma(y + 1.0) - log_gamma(trials - y + 1.0);
  const double log_beta_num = log_gamma(a + y) + log_gamma(b + trials - y) - log_gamma(a + b + trials);
  const double log_beta_den = log_gamma(a) + log_gamma(b) - log_gamma(a + b);
  return log_choose + log_beta_num - log_beta_den;
}

/// log P(Y = y | z) of the Dirichlet-Multinomial with alpha_k = exp(z_k).
inline double log_dirichlet_multinomial_marginal(const VoteCounts &y,
                                                 const Eigen::Ref<const Eigen::VectorXd> &z,
                                                 KernelDiagnostics *diag = nullptr) {
  if (static_cast<std::size_t>(z.size()) != y.size())
    throw DomainError("vote vector and embedding differ in length");
  detail::require_finite(z);
  return detail::log_multinomial_coefficient(y) + detail::log_dm_ratio(y.counts(), y.total(), z, diag);
}

/// Unnormalized log posterior log f(y | z) + log N(z; mu, Sigma).
inline double log_posterior(const Eigen::Ref<const Eigen::VectorXd> &z, const VoteCounts &y,
                            const GaussianPrior &prior, KernelDiagnostics *diag = nullptr) {
  if (prior.dim() != y.size())
    throw DomainError("prior dimension does not match vote vector");
  return log_dirichlet_multinomial_marginal(y, z, diag) + prior.log_density(z);
}

/// Log posterior of one instance, with the data-only constants hoisted out of
/// the per-step evaluation. Values equal log_posterior() up to rounding.
class InstancePosterior {
public:
  InstancePosterior(const VoteCounts &y, const GaussianPrior &prior)
      : counts_(y.counts()), total_(y.total()), mu_(prior.mu()),
        lower_(prior.cholesky_lower()), scratch_(static_cast<Eigen::Index>(y.size())) {
    if (prior.dim() != y.size())
      throw DomainError("prior dimension does not match vote vector");
    const double k = static_cast<double>(y.size());
    constant_ = detail::log_multinomial_coefficient(y) -
                0.5 * (k * std::log(2.0 * std::numbers::pi) + prior.log_det());
  }

  [[nodiscard]] std::size_t dim() const noexcept { return counts_.size(); }

  double operator()(const Eigen::Ref<const Eigen::VectorXd> &z) {
    if (!z.allFinite())
      return -std::numeric_limits<double>::infinity();
    scratch_ = z - mu_;
    lower_.triangularView<Eigen::Lower>().solveInPlace(scratch_);
    return constant_ + detail::log_dm_ratio(counts_, total_, z, &diag_) - 0.5 * scratch_.squaredNorm();
  }

  [[nodiscard]] const KernelDiagnostics &diagnostics() const noexcept { return diag_; }

private:
  std::vector<int> counts_;
  int total_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd lower_;
  Eigen::VectorXd scratch_;
  double constant_ = 0.0;
  KernelDiagnostics diag_;
};

struct LogPosteriorDerivatives {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// log_posterior() with its analytic gradient and Hessian in z. With
/// alpha = exp(z), g_k = psi(alpha_k + y_k) - psi(alpha_k) + psi(alpha_0) - psi(alpha_0 + J):
///   d/dz_k      = alpha_k g_k
///   d2/dz_k dz_l = delta_kl alpha_k g_k
///                 + alpha_k alpha_l [delta_kl (psi1(alpha_k + y_k) - psi1(alpha_k))
///                                    + psi1(alpha_0) - psi1(alpha_0 + J)]
/// plus the Gaussian terms -Sigma^{-1}(z - mu) and -Sigma^{-1}.
inline LogPosteriorDerivatives log_posterior_derivatives(const Eigen::Ref<const Eigen::VectorXd> &z,
                                                         const VoteCounts &y, const GaussianPrior &prior) {
  using boost::math::digamma;
  using boost::math::trigamma;
  const double value = log_posterior(z, y, prior);
  const Eigen::Index k = z.size();
  Eigen::VectorXd alpha(k);
  for (Eigen::Index i = 0; i < k; ++i)
    alpha[i] = std::exp(detail::clamp_z(z[i], nullptr));
  const double alpha0 = alpha.sum();
  const double total = y.total();
  const double common1 = digamma(alpha0) - digamma(alpha0 + total);
  const double common2 = trigamma(alpha0) - trigamma(alpha0 + total);

  LogPosteriorDerivatives d;
  d.value = value;
  d.gradient.resize(k);
  d.hessian = common2 * alpha * alpha.transpose();
  for (Eigen::Index i = 0; i < k; ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    const double g = (yi > 0 ? digamma(alpha[i] + yi) - digamma(alpha[i]) : 0.0) + common1;
    const double h = yi > 0 ? trigamma(alpha[i] + yi) - trigamma(alpha[i]) : 0.0;
    d.gradient[i] = alpha[i] * g;
    d.hessian(i, i) += alpha[i] * g + alpha[i] * alpha[i] * h;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(prior.sigma());
  const Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(k, k));
  d.gradient -= precision * (z - prior.mu());
  d.hessian -= precision;
  return d;
}

/// Softmax mean and Dirichlet covariance of pi | z.
///
/// Off-diagonals use the standard Dirichlet covariance
/// (delta_kk' m_k - m_k m_k') / (1 + alpha_0); the diagonal reduces to
/// m_k (1 - m_k) / (1 + alpha_0).
inline DirichletMoments dirichlet_moments(const Eigen::Ref<const Eigen::VectorXd> &z,
                                          KernelDiagnostics *diag = nullptr) {
  if (z.size() < 2)
    throw DomainError("dirichlet moments need at least two entries");
  detail::require_finite(z);

  const double zmax = z.maxCoeff();
  Eigen::VectorXd mean = (z.array() - zmax).exp();
  mean /= mean.sum();

  double alpha0 = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k)
    alpha0 += std::exp(detail::clamp_z(z[k], diag));

  Eigen::MatrixXd cov = -mean * mean.transpose();
  cov.diagonal() += mean;
  cov /= (1.0 + alpha0);
  return {std::move(mean), std::move(cov)};
}

struct BetaMoments {
  double mean;
  double variance;
  double log_variance;
};

/// Mean and variance of pi ~ Beta(exp z1, exp z2).
inline BetaMoments beta_moments(const Eigen::Ref<const Eigen::VectorXd> &z,
                                KernelDiagnostics *diag = nullptr) {
  if (z.size() != 2)
    throw DomainError("beta moments need a two-entry embedding");
  detail::require_finite(z);
  const double zmax = std::max(z[0], z[1]);
  const double e1 = std::exp(z[0] - zmax);
  const double e2 = std::exp(z[1] - zmax);
  const double mean = e1 / (e1 + e2);
  const double other = e2 / (e1 + e2);
  const double alpha0 = std::exp(detail::clamp_z(z[0], diag)) + std::exp(detail::clamp_z(z[1], diag));
  const double variance = mean * other / (1.0 + alpha0);
  const double lse = zmax + std::log(e1 + e2);
  const double log_variance = (z[0] - lse) + (z[1] - lse) - std::log1p(alpha0);
  return {mean, variance, log_variance};
}

/// Inclusive arithmetic grid start, start + step, ..., <= stop.
struct GridRange {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  [[nodiscard]] std::vector<double> values() const {
    if (!std::isfinite(start) || !std::isfinite(stop) || !std::isfinite(step))
      throw DomainError("grid range must be finite");
    if (step <= 0.0)
      throw DomainError("grid step must be positive");
    std::vector<double> out;
    if (stop < start)
      return out;
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      double v = start + static_cast<double>(i) * step;
      if (std::abs(v) < 1e-9 * step)
        v = 0.0; // snap accumulated rounding so the origin is exact
      out.push_back(v);
    }
    return out;
  }
};

struct MomentSurfaceRow {
  double z1;
  double z2;
  double mean;
  double log_variance;
};

/// Beta mean / log-variance over the z1 x z2 grid, z1-major.
inline std::vector<MomentSurfaceRow> moment_surface(const GridRange &z1, const GridRange &z2) {
  const auto xs = z1.values();
  const auto ys = z2.values();
  if (xs.empty() || ys.empty())
    throw DomainError("moment surface grid is empty");
  std::vector<MomentSurfaceRow> rows;
  rows.reserve(xs.size() * ys.size());
  Eigen::Vector2d z;
  for (double x : xs) {
    for (double y : ys) {
      z << x, y;
      const auto m = beta_moments(z);
      rows.push_back({x, y, m.mean, m.log_variance});
    }
  }
  return rows;
}

} // namespace embedgt
