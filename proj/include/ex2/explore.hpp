#pragma once

#include "ex2/density.hpp"
#include "ex2/replay_buffer.hpp"
#include "ex2/trajectory.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace ex2 {

enum class BonusKind { neg_log_p, inv_sqrt_count };

struct BonusConfig {
  BonusKind kind = BonusKind::neg_log_p;
  double beta = 1.0;

  void validate() const {
    if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("beta must be finite and non-negative");
  }
};

/// Floor on pseudo-counts inside the inverse-square-root bonus.
inline constexpr double kMinCount = 1e-3;

/// Bonus for an unnormalized density rho. neg_log_p gives -beta log rho
/// (additive constants are absorbed by the baseline); inv_sqrt_count gives
/// beta / sqrt(N) with N = n min(1, rho / Z).
inline double bonus_from_density(double rho, const BonusConfig& cfg, long n, double z) {
  switch (cfg.kind) {
    case BonusKind::neg_log_p:
      return -cfg.beta * std::log(rho);
    case BonusKind::inv_sqrt_count:
      return cfg.beta / std::sqrt(std::max(pseudo_count_from_density(rho, n, z).count, kMinCount));
  }
  return 0.0;
}

/// Bonus from a discriminator output; neg_log_p reduces to beta log(d / (1 - d)).
inline double bonus(double d, const BonusConfig& cfg, long n, double z) {
  return bonus_from_density(density_from_d(d), cfg, n, z);
}

struct BonusStats {
  double mean = 0.0;
  double max = 0.0;
  long clamp_count = 0;
};

/// Clamps a density into the range implied by the discriminator clamp.
inline double clamp_density(double rho, bool* clamped = nullptr) {
  const double c = std::min(std::max(rho, kDensityMin), kDensityMax);
  if (clamped) *clamped = c != rho;
  return c;
}

/// Writes aug_rewards = raw_rewards + bonus for every state. `densities`
/// holds one unnormalized density per state, in trajectory-major order. Z is
/// the mean (clamped) density over the batch. `clamped` optionally marks
/// states whose density already hit the clamp upstream.
inline BonusStats augment_from_densities(std::span<Trajectory> trajectories,
                                         std::span<const double> densities, const BonusConfig& cfg,
                                         long buffer_size, std::span<const char> clamped = {}) {
  cfg.validate();
  std::size_t total = 0;
  for (const auto& t : trajectories) total += t.size();
  if (densities.size() != total) throw ConfigError("augment: one density per state required");

  BonusStats stats;
  std::vector<double> rho(total);
  double z = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    bool c = false;
    rho[i] = clamp_density(densities[i], &c);
    if (c || (!clamped.empty() && clamped[i])) ++stats.clamp_count;
    z += rho[i];
  }
  if (total > 0) z /= static_cast<double>(total);

  std::size_t k = 0;
  double sum = 0.0;
  bool first = true;
  for (auto& t : trajectories) {
    t.aug_rewards.resize(t.raw_rewards.size());
    for (std::size_t i = 0; i < t.raw_rewards.size(); ++i, ++k) {
      const double b = bonus_from_density(rho[k], cfg, std::max<long>(buffer_size, 1), z);
      t.aug_rewards[i] = t.raw_rewards[i] + b;
      sum += b;
      stats.max = first ? b : std::max(stats.max, b);
      first = false;
    }
  }
  stats.mean = total > 0 ? sum / static_cast<double>(total) : 0.0;
  return stats;
}

/// Same as augment_from_densities, starting from discriminator outputs.
inline BonusStats augment(std::span<Trajectory> trajectories, std::span<const double> d_values,
                          const BonusConfig& cfg, long buffer_size) {
  std::vector<double> rho(d_values.size());
  std::vector<char> clamped(d_values.size(), 0);
  for (std::size_t i = 0; i < d_values.size(); ++i) {
    bool c = false;
    rho[i] = density_from_d(d_values[i], &c);
    clamped[i] = c;
  }
  return augment_from_densities(trajectories, rho, cfg, buffer_size, clamped);
}

/// Bonus-free augmentation: aug_rewards = raw_rewards.
inline void copy_raw_rewards(std::span<Trajectory> trajectories) {
  for (auto& t : trajectories) t.aug_rewards = t.raw_rewards;
}

}  // namespace ex2
