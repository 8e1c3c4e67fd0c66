#pragma once

// Seeding and sampling primitives. Engines are std::mt19937_64 (output fixed by
// the standard); distributions come from Boost.Random so streams are identical
// across standard-library implementations.

#include "embedgt/error.hpp"
#include "embedgt/types.hpp"

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace embedgt {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a parent seed and a list of keys.
/// Order-sensitive in the keys, insensitive to anything else.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto k : keys)
    h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Seed key for a vote pattern; equal count vectors give equal keys.
inline std::uint64_t pattern_key(const VoteCounts &y) noexcept {
  std::uint64_t h = mix64(y.size());
  for (int c : y.counts())
    h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(c)));
  return h;
}

inline double draw_uniform(Rng &rng) { return boost::random::uniform_01<double>{}(rng); }

inline double draw_normal(Rng &rng) { return boost::random::normal_distribution<double>{}(rng); }

/// log of a Gamma(shape, 1) variate. For shape < 1 uses the boost identity
/// G(a) = G(a + 1) * U^(1/a), kept in log space so tiny shapes do not underflow.
inline double draw_log_gamma(Rng &rng, double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape))
    throw DomainError("gamma shape must be positive and finite");
  if (shape >= 1.0)
    return std::log(boost::random::gamma_distribution<double>{shape, 1.0}(rng));
  const double g = boost::random::gamma_distribution<double>{shape + 1.0, 1.0}(rng);
  double u = draw_uniform(rng);
  while (u <= 0.0)
    u = draw_uniform(rng);
  return std::log(g) + std::log(u) / shape;
}

/// pi ~ Dirichlet(alpha), normalized in log space.
inline Eigen::VectorXd draw_dirichlet(Rng &rng, const Eigen::Ref<const Eigen::VectorXd> &alpha) {
  Eigen::VectorXd logs(alpha.size());
  for (Eigen::Index k = 0; k < alpha.size(); ++k)
    logs[k] = draw_log_gamma(rng, alpha[k]);
  const double m = logs.maxCoeff();
  Eigen::VectorXd p = (logs.array() - m).exp();
  return p / p.sum();
}

/// Y ~ Multinomial(trials, p) via sequential conditional binomials.
inline std::vector<int> draw_multinomial(Rng &rng, int trials, const Eigen::Ref<const Eigen::VectorXd> &p) {
  std::vector<int> out(static_cast<std::size_t>(p.size()), 0);
  int remaining = trials;
  double mass = 1.0;
  for (Eigen::Index k = 0; k + 1 < p.size() && remaining > 0; ++k) {
    const double q = mass > 0.0 ? std::clamp(p[k] / mass, 0.0, 1.0) : 0.0;
    const int n = q >= 1.0 ? remaining : boost::random::binomial_distribution<int, double>{remaining, q}(rng);
    out[static_cast<std::size_t>(k)] = n;
    remaining -= n;
    mass -= p[k];
  }
  out.back() += remaining;
  return out;
}

/// z ~ N(mu, L L').
inline Eigen::VectorXd draw_mvn(Rng &rng, const Eigen::VectorXd &mu, const Eigen::MatrixXd &lower) {
  Eigen::VectorXd e(mu.size());
  for (Eigen::Index k = 0; k < e.size(); ++k)
    e[k] = draw_normal(rng);
  return mu + lower * e;
}

} // namespace embedgt
