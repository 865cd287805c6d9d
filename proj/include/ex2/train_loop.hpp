#pragma once

#include "ex2/density.hpp"
#include "ex2/exemplar.hpp"
#include "ex2/explore.hpp"
#include "ex2/replay_buffer.hpp"
#include "ex2/rl.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace ex2 {

/// Where the per-state density behind the bonus comes from.
enum class BonusSource { none, exemplar, kde, histogram };
enum class Variant { single, k_exemplar, amortized };

struct LoopConfig {
  int iterations = 500;
  int batch_size = 20;
  double gamma = 0.99;
  double policy_lr = 1e-3;

  BonusSource source = BonusSource::exemplar;
  BonusConfig bonus;

  Variant variant = Variant::k_exemplar;
  int k = 5;
  ExemplarArch arch;
  TrainConfig train;

  int latent_dim = 16;
  std::vector<int> amortized_hidden{32, 32};
  double kl_weight = 0.01;
  int eval_samples = 32;

  double kde_bandwidth = 0.05;
  int kde_reference = 1000;
  std::optional<GridSpec> histogram_grid;

  std::size_t buffer_capacity = 100000;
  std::uint64_t seed = 0;
  int workers = 1;
  bool record_wall_ms = false;
  bool stop_on_success = false;  // end the run after the first iteration that reaches a reward

  int grid_interval = 0;  // 0 disables periodic grids
  std::optional<GridSpec> grid;

  bool bonus_active() const { return source != BonusSource::none && bonus.beta > 0.0; }

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (!(policy_lr > 0.0)) throw ConfigError("policy learning rate must be positive");
    if (k < 1) throw ConfigError("K must be at least 1");
    if (!(kde_bandwidth > 0.0)) throw ConfigError("kde bandwidth must be positive");
    if (kde_reference < 1) throw ConfigError("kde reference size must be positive");
    if (buffer_capacity < 1) throw ConfigError("buffer capacity must be positive");
    bonus.validate();
    train.validate();
    if (source == BonusSource::histogram && !histogram_grid)
      throw ConfigError("histogram bonus requires a grid");
  }
};

inline constexpr const char* kMetricsHeader =
    "iter,mean_raw_return,mean_bonus,max_bonus,clamp_count,disc_loss,buffer_size,wall_ms";

struct MetricsRow {
  int iter = 0;
  double mean_raw_return = 0.0;
  double mean_bonus = 0.0;
  double max_bonus = 0.0;
  long clamp_count = 0;
  double disc_loss = 0.0;
  std::size_t buffer_size = 0;
  long wall_ms = 0;

  std::string csv() const {
    return fmt::format("{},{:.10g},{:.10g},{:.10g},{},{:.10g},{},{}", iter, mean_raw_return, mean_bonus,
                       max_bonus, clamp_count, disc_loss, buffer_size, wall_ms);
  }
};

struct LoopResult {
  rl::Policy policy;
  std::vector<MetricsRow> metrics;
  std::optional<AmortizedLatent> amortized;
  int first_success_iter = -1;  // first iteration with a positive raw return
  long successful_episodes = 0;
  double final_success_rate = 0.0;  // fraction of the last batch with positive raw return
};

struct LoopHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  std::function<void(int iter, const std::string& name, const DensityGrid&)> on_grid;
  std::function<void(int iter, std::span<const Trajectory> batch, const ReplayBuffer& buffer)> on_batch;
};

namespace detail {

inline Eigen::MatrixXd stack_states(const std::vector<Trajectory>& batch) {
  std::size_t n = 0;
  for (const auto& t : batch) n += t.size();
  const Eigen::Index d = batch.empty() || batch.front().states.empty() ? 0 : batch.front().states.front().size();
  Eigen::MatrixXd x(d, static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (const auto& t : batch)
    for (const auto& s : t.states) x.col(k++) = s;
  return x;
}

inline std::vector<State> flat_states(const std::vector<Trajectory>& batch) {
  std::vector<State> v;
  for (const auto& t : batch) v.insert(v.end(), t.states.begin(), t.states.end());
  return v;
}

inline Eigen::VectorXd evaluate_parallel(const AmortizedLatent& m, const Eigen::MatrixXd& x,
                                         std::uint64_t seed, int workers) {
  Eigen::VectorXd out(x.cols());
  const std::size_t chunks = static_cast<std::size_t>(std::max(workers, 1));
  const Eigen::Index per = (x.cols() + static_cast<Eigen::Index>(chunks) - 1) / static_cast<Eigen::Index>(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const Eigen::Index lo = static_cast<Eigen::Index>(c) * per;
    const Eigen::Index hi = std::min<Eigen::Index>(x.cols(), lo + per);
    if (lo < hi) out.segment(lo, hi - lo) = m.evaluate(x.middleCols(lo, hi - lo), seed, static_cast<std::uint64_t>(lo));
  });
  return out;
}

}  // namespace detail

/// Batch policy optimization with exemplar-model exploration bonuses:
/// each iteration samples a batch, scores every visited state against the
/// replay buffer, augments rewards, takes one policy-gradient step, then
/// appends the batch to the buffer. On the first iteration the batch is
/// pushed before scoring so the buffer is never empty.
inline LoopResult train_loop(const rl::Mdp& mdp, rl::Policy policy, const LoopConfig& cfg,
                             const LoopHooks& hooks = {}) {
  cfg.validate();
  LoopResult result;
  rl::PolicyOptimizer opt(policy);
  ReplayBuffer buffer(cfg.buffer_capacity);
  if (cfg.bonus_active() && cfg.source == BonusSource::exemplar && cfg.variant == Variant::amortized)
    result.amortized = AmortizedLatent::make(mdp.state_dim(), cfg.latent_dim, cfg.amortized_hidden, cfg.kl_weight,
                                             cfg.eval_samples, derive_seed(cfg.seed, Stream::init));
  if (result.amortized) {
    result.amortized->standardize = cfg.arch.standardize;
    result.amortized->input_noise = cfg.arch.sigma;
  }

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    MetricsRow row;
    row.iter = iter;
    try {
      std::vector<Trajectory> batch(static_cast<std::size_t>(cfg.batch_size));
      parallel_for(batch.size(), cfg.workers, [&](std::size_t j) {
        auto env = mdp.clone();
        batch[j] = rl::rollout(policy, *env, derive_seed(cfg.seed, Stream::rollout, iter, j));
      });
      if (iter == 1) buffer.push_trajectories(batch);

      if (cfg.bonus_active()) {
        const auto states = detail::flat_states(batch);
        std::vector<double> d(states.size(), 0.5);
        std::vector<double> rho;
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, Stream::negatives, iter);
        if (cfg.source == BonusSource::exemplar) {
          switch (cfg.variant) {
            case Variant::single: {
              std::vector<double> losses(states.size());
              parallel_for(states.size(), cfg.workers, [&](std::size_t i) {
                TrainConfig own = tc;
                own.seed = derive_seed(cfg.seed, Stream::negatives, iter, i + 1);
                const auto m = train_single(states[i], buffer, own, cfg.arch);
                d[i] = m.evaluate(states[i]);
                losses[i] = m.train_loss;
              });
              for (double l : losses) row.disc_loss += l / static_cast<double>(losses.size());
              break;
            }
            case Variant::k_exemplar: {
              const auto bank = train_k(consecutive_groups(batch, cfg.k), buffer, tc, cfg.arch);
              std::size_t i = 0;
              for (const auto& g : bank.evaluate_members())
                for (double v : g) d[i++] = v;
              row.disc_loss = bank.train_loss;
              break;
            }
            case Variant::amortized: {
              train_amortized(*result.amortized, states, buffer, tc);
              const Eigen::VectorXd dv = detail::evaluate_parallel(
                  *result.amortized, detail::stack_states(batch), derive_seed(cfg.seed, Stream::evaluation, iter),
                  cfg.workers);
              for (std::size_t i = 0; i < d.size(); ++i) d[i] = dv[static_cast<Eigen::Index>(i)];
              row.disc_loss = result.amortized->train_loss;
              break;
            }
          }
        } else if (cfg.source == BonusSource::kde) {
          const auto ref = buffer.sample(static_cast<std::size_t>(cfg.kde_reference),
                                         derive_seed(cfg.seed, Stream::reference, iter));
          rho.resize(states.size());
          parallel_for(states.size(), cfg.workers,
                       [&](std::size_t i) { rho[i] = kde_density(ref, states[i], cfg.kde_bandwidth); });
        } else if (cfg.source == BonusSource::histogram) {
          const auto h = histogram_density(buffer, *cfg.histogram_grid);
          rho.resize(states.size());
          for (std::size_t i = 0; i < states.size(); ++i) {
            const auto [ix, iy] = cfg.histogram_grid->cell_of(states[i]);
            rho[i] = h.at(ix, iy);
          }
        }
        const auto stats = rho.empty()
                               ? augment(batch, d, cfg.bonus, static_cast<long>(buffer.size()))
                               : augment_from_densities(batch, rho, cfg.bonus, static_cast<long>(buffer.size()));
        row.mean_bonus = stats.mean;
        row.max_bonus = stats.max;
        row.clamp_count = stats.clamp_count;
      } else {
        copy_raw_rewards(batch);
      }

      if (hooks.on_batch) hooks.on_batch(iter, batch, buffer);
      rl::pg_update(policy, opt, batch, cfg.gamma, cfg.policy_lr);
      if (iter != 1) buffer.push_trajectories(batch);

      long successes = 0;
      for (const auto& t : batch) {
        row.mean_raw_return += t.raw_return() / static_cast<double>(batch.size());
        if (t.raw_return() > 0.0) ++successes;
      }
      result.successful_episodes += successes;
      if (successes > 0 && result.first_success_iter < 0) result.first_success_iter = iter;
      result.final_success_rate = static_cast<double>(successes) / static_cast<double>(batch.size());
      row.buffer_size = buffer.size();

      if (cfg.grid && cfg.grid_interval > 0 && iter % cfg.grid_interval == 0 && hooks.on_grid &&
          mdp.state_dim() == 2) {
        hooks.on_grid(iter, "empirical", histogram_density(buffer, *cfg.grid));
        if (result.amortized)
          hooks.on_grid(iter, "exemplar",
                        grid_eval(*result.amortized, *cfg.grid, derive_seed(cfg.seed, Stream::grid, iter), true));
      }
    } catch (const Error& e) {
      throw TrainingError(std::string(e.what()) + "; aborted at iteration", iter);
    }
    if (cfg.record_wall_ms)
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(row);
    if (hooks.on_metrics) hooks.on_metrics(row);
    if (cfg.stop_on_success && result.first_success_iter == iter) break;
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace ex2
