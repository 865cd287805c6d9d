#pragma once

#include "ex2/checkpoint.hpp"
#include "ex2/config.hpp"
#include "ex2/density.hpp"
#include "ex2/envs.hpp"
#include "ex2/train_loop.hpp"

#include <Eigen/Core>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace ex2 {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCompareHeader =
    "method,seed,reached,first_success_iter,successful_episodes,final_mean_return";
inline constexpr const char* kSummaryHeader =
    "method,seeds,reached,mean_final_return,stderr_final_return,mean_successful_episodes";
inline constexpr const char* kFidelityHeader = "method,seed,spearman,states";
inline constexpr const char* kSweepHeader = "sigma,analytic_roughness,learned_roughness,tv_analytic_learned";

namespace fs = std::filesystem;

/// Failure inside a run, carrying where partial artifacts were left.
class RunError : public Error {
 public:
  RunError(const std::string& what, std::string dir) : Error(what), dir_(std::move(dir)) {}
  const std::string& directory() const { return dir_; }

 private:
  std::string dir_;
};

namespace detail {

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open " + p.string());
  out << text;
  if (!out) throw Error("failed writing " + p.string());
}

inline void write_grid_pair(const DensityGrid& g, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  write_grid_csv(g, (dir / (stem + ".csv")).string());
  write_grid_pgm(g, (dir / (stem + ".pgm")).string());
}

class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    out_ << YAML::BeginMap;
    out_ << YAML::Key << "command" << YAML::Value << command;
  }
  template <class T>
  Manifest& field(const std::string& k, const T& v) {
    out_ << YAML::Key << k << YAML::Value << v;
    return *this;
  }
  Manifest& seeds(const std::vector<std::uint64_t>& s) {
    out_ << YAML::Key << "seeds" << YAML::Value << YAML::Flow << s;
    return *this;
  }
  void write(const fs::path& p, const std::string& status, const std::string& error = {}, int iteration = -1) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    out_ << YAML::Key << "status" << YAML::Value << status;
    if (!error.empty()) {
      out_ << YAML::Key << "error" << YAML::Value << YAML::BeginMap;
      out_ << YAML::Key << "message" << YAML::Value << error;
      if (iteration >= 0) out_ << YAML::Key << "iteration" << YAML::Value << iteration;
      out_ << YAML::EndMap;
    }
    out_ << YAML::Key << "duration_s" << YAML::Value << secs;
    out_ << YAML::Key << "versions" << YAML::Value << YAML::BeginMap;
    out_ << YAML::Key << "ex2" << YAML::Value << kVersion;
    out_ << YAML::Key << "eigen" << YAML::Value
         << fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION);
    out_ << YAML::Key << "fmt" << YAML::Value << FMT_VERSION;
    out_ << YAML::Key << "compiler" << YAML::Value << compiler();
    out_ << YAML::EndMap << YAML::EndMap;
    write_text(p, std::string(out_.c_str()) + "\n");
  }

 private:
  static std::string compiler() {
#if defined(__clang__)
    return fmt::format("clang {}.{}.{}", __clang_major__, __clang_minor__, __clang_patchlevel__);
#elif defined(__GNUC__)
    return fmt::format("gcc {}.{}.{}", __GNUC__, __GNUC_MINOR__, __GNUC_PATCHLEVEL__);
#else
    return "unknown";
#endif
  }
  YAML::Emitter out_;
  std::chrono::steady_clock::time_point start_;
};

inline rl::Policy make_policy(const rl::Mdp& mdp, const PolicySpec& p, std::uint64_t seed) {
  return rl::Policy::make(mdp.state_dim(), mdp.action_spec(), p.hidden, p.init_log_std, p.entropy_bonus, seed);
}

}  // namespace detail

/// Artifacts of one exploration run: metrics.csv (written row by row, so a
/// failed run keeps the rows it finished), density grids every
/// grid_interval iterations, and checkpoint.bin at the end.
struct ExploreOutcome {
  LoopResult result;
  fs::path dir;
};

inline ExploreOutcome run_explore_seed(const ExperimentConfig& cfg, const LoopConfig& loop_in, std::uint64_t seed,
                                       const fs::path& dir) {
  fs::create_directories(dir);
  LoopConfig loop = loop_in;
  loop.seed = seed;
  const auto mdp = cfg.env.make();
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  if (!metrics) throw Error("cannot open " + (dir / "metrics.csv").string());
  metrics << kMetricsHeader << "\n";
  std::vector<State> last_states;
  LoopHooks hooks;
  hooks.on_metrics = [&](const MetricsRow& r) { metrics << r.csv() << "\n" << std::flush; };
  hooks.on_grid = [&](int iter, const std::string& name, const DensityGrid& g) {
    detail::write_grid_pair(g, dir / "grids", fmt::format("iter{:05d}_{}", iter, name));
  };
  hooks.on_batch = [&](int, std::span<const Trajectory> batch, const ReplayBuffer&) {
    last_states.clear();
    for (const auto& t : batch) last_states.insert(last_states.end(), t.states.begin(), t.states.end());
  };
  ExploreOutcome out{train_loop(*mdp, detail::make_policy(*mdp, cfg.policy, seed), loop, hooks), dir};
  Checkpoint ck;
  put_policy(ck, out.result.policy);
  if (out.result.amortized) put_amortized(ck, *out.result.amortized);
  put_states(ck, "states.final_batch", last_states);
  save_checkpoint(ck, (dir / "checkpoint.bin").string());
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-count fidelity on the chain

struct FidelityResult {
  double spearman = 0.0;
  std::vector<long> counts;     // exact visits per state index
  std::vector<double> pseudo;   // pseudo-count per state index (visited states only)
  std::vector<int> visited;     // indices with at least one visit
};

/// Fills a buffer with `buffer_states` states from uniform-policy episodes,
/// scores every visited chain state with the method's density source and
/// correlates pseudo-counts with exact visit counts. Z is the mean density
/// over all buffered states.
inline FidelityResult chain_fidelity(const envs::ChainMdp& chain, const LoopConfig& method, int buffer_states,
                                     std::uint64_t seed) {
  if (buffer_states < 1) throw ConfigError("fidelity: buffer_states must be positive");
  rl::Policy uniform = rl::Policy::make(chain.state_dim(), chain.action_spec(), {}, 0.0, 0.0, seed);
  for (auto& l : uniform.net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  ReplayBuffer buffer(static_cast<std::size_t>(buffer_states));
  for (std::uint64_t ep = 0; buffer.size() < static_cast<std::size_t>(buffer_states); ++ep) {
    auto env = chain.clone();
    const Trajectory t = rl::rollout(uniform, *env, derive_seed(seed, Stream::rollout, 0, ep));
    for (const auto& s : t.states)
      if (buffer.size() < static_cast<std::size_t>(buffer_states)) buffer.push(s);
  }
  FidelityResult r;
  r.counts = envs::chain_visit_counts(buffer, chain.n_states);
  for (int k = 0; k < chain.n_states; ++k)
    if (r.counts[static_cast<std::size_t>(k)] > 0) r.visited.push_back(k);
  if (r.visited.size() < 2) throw EmptyInputError("fidelity: fewer than two visited states");

  std::vector<double> rho(static_cast<std::size_t>(chain.n_states), 0.0);
  TrainConfig tc = method.train;
  const auto n = static_cast<long>(buffer.size());
  switch (method.source) {
    case BonusSource::none:
      throw ConfigError("fidelity: method has no density source");
    case BonusSource::histogram:
      for (int k : r.visited) rho[static_cast<std::size_t>(k)] = static_cast<double>(r.counts[static_cast<std::size_t>(k)]) / n;
      break;
    case BonusSource::kde:
      for (int k : r.visited) rho[static_cast<std::size_t>(k)] = kde_density(buffer, chain.one_hot(k), method.kde_bandwidth);
      break;
    case BonusSource::exemplar:
      switch (method.variant) {
        case Variant::single:
          parallel_for(r.visited.size(), method.workers, [&](std::size_t i) {
            const int k = r.visited[i];
            TrainConfig own = tc;
            own.seed = derive_seed(seed, Stream::negatives, 0, static_cast<std::uint64_t>(k) + 1);
            rho[static_cast<std::size_t>(k)] = density_from_d(train_single(chain.one_hot(k), buffer, own, method.arch).evaluate(chain.one_hot(k)));
          });
          break;
        case Variant::k_exemplar: {
          std::vector<std::vector<State>> groups;
          for (int k : r.visited) groups.push_back({chain.one_hot(k)});
          tc.seed = derive_seed(seed, Stream::negatives);
          const auto d = train_k(std::move(groups), buffer, tc, method.arch).evaluate_members();
          for (std::size_t i = 0; i < r.visited.size(); ++i) rho[static_cast<std::size_t>(r.visited[i])] = density_from_d(d[i][0]);
          break;
        }
        case Variant::amortized: {
          auto model = AmortizedLatent::make(chain.state_dim(), method.latent_dim, method.amortized_hidden,
                                             method.kl_weight, method.eval_samples, derive_seed(seed, Stream::init));
          model.standardize = method.arch.standardize;
          model.input_noise = method.arch.sigma;
          tc.seed = derive_seed(seed, Stream::negatives);
          std::vector<State> exemplars;
          for (int k : r.visited) exemplars.push_back(chain.one_hot(k));
          train_amortized(model, exemplars, buffer, tc);
          Eigen::MatrixXd x(chain.state_dim(), static_cast<Eigen::Index>(r.visited.size()));
          for (std::size_t i = 0; i < r.visited.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = chain.one_hot(r.visited[i]);
          const Eigen::VectorXd d = model.evaluate(x, derive_seed(seed, Stream::evaluation));
          for (std::size_t i = 0; i < r.visited.size(); ++i) rho[static_cast<std::size_t>(r.visited[i])] = density_from_d(d[static_cast<Eigen::Index>(i)]);
          break;
        }
      }
      break;
  }
  double z = 0.0;
  for (int k : r.visited) z += static_cast<double>(r.counts[static_cast<std::size_t>(k)]) * rho[static_cast<std::size_t>(k)];
  z /= static_cast<double>(n);
  std::vector<double> xs, ys;
  for (int k : r.visited) {
    const double c = pseudo_count_from_density(rho[static_cast<std::size_t>(k)], n, z).count;
    r.pseudo.push_back(c);
    xs.push_back(c);
    ys.push_back(static_cast<double>(r.counts[static_cast<std::size_t>(k)]));
  }
  r.spearman = spearman(xs, ys);
  return r;
}

// ---------------------------------------------------------------------------
// Modes

struct SeedScore {
  std::string method;
  std::uint64_t seed = 0;
  bool reached = false;
  int first_success_iter = -1;
  long successful_episodes = 0;
  double final_mean_return = 0.0;
};

struct MethodSummary {
  std::string method;
  int seeds = 0;
  int reached = 0;
  double mean_final_return = 0.0;
  double stderr_final_return = 0.0;
  double mean_successful_episodes = 0.0;
};

inline std::vector<MethodSummary> summarize(const std::vector<SeedScore>& rows) {
  std::vector<MethodSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MethodSummary& m) { return m.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method});
      it = std::prev(out.end());
    }
    ++it->seeds;
    it->reached += r.reached ? 1 : 0;
    it->mean_final_return += r.final_mean_return;
    it->mean_successful_episodes += static_cast<double>(r.successful_episodes);
  }
  for (auto& m : out) {
    m.mean_final_return /= m.seeds;
    m.mean_successful_episodes /= m.seeds;
    double ss = 0.0;
    for (const auto& r : rows)
      if (r.method == m.method) ss += std::pow(r.final_mean_return - m.mean_final_return, 2);
    m.stderr_final_return = m.seeds > 1 ? std::sqrt(ss / (m.seeds - 1)) / std::sqrt(static_cast<double>(m.seeds)) : 0.0;
  }
  return out;
}

/// Fixed-width text rendering of a CSV table.
inline std::string aligned_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (w.size() <= i) w.push_back(0);
      w[i] = std::max(w[i], r[i].size());
    }
  std::string s;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) line += fmt::format("{:<{}}", r[i], i + 1 < r.size() ? w[i] + 2 : 0);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    s += line + "\n";
  }
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',') out.emplace_back();
    else out.back().push_back(c);
  }
  return out;
}

inline std::string tabulate(const std::string& csv) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  for (char c : csv) {
    if (c == '\n') {
      rows.push_back(split_csv(line));
      line.clear();
    } else {
      line.push_back(c);
    }
  }
  if (!line.empty()) rows.push_back(split_csv(line));
  return aligned_table(rows);
}

struct RunReport {
  fs::path dir;
  std::vector<SeedScore> scores;                      // explore and success compare
  std::vector<MethodSummary> summary;                 // compare
  std::vector<std::pair<std::string, double>> fidelity;  // pseudo-count compare: method, spearman per seed
};

namespace detail {

inline std::string seed_dir(std::uint64_t s) { return fmt::format("seed-{}", s); }

inline SeedScore score(const std::string& method, std::uint64_t seed, const LoopResult& r) {
  SeedScore s{method, seed};
  s.reached = r.first_success_iter > 0;
  s.first_success_iter = r.first_success_iter;
  s.successful_episodes = r.successful_episodes;
  s.final_mean_return = r.metrics.empty() ? 0.0 : r.metrics.back().mean_raw_return;
  return s;
}

inline std::string scores_csv(const std::vector<SeedScore>& rows) {
  std::string s = std::string(kCompareHeader) + "\n";
  for (const auto& r : rows)
    s += fmt::format("{},{},{},{},{},{:.10g}\n", r.method, r.seed, r.reached ? 1 : 0, r.first_success_iter,
                     r.successful_episodes, r.final_mean_return);
  return s;
}

inline std::string summary_csv(const std::vector<MethodSummary>& rows) {
  std::string s = std::string(kSummaryHeader) + "\n";
  for (const auto& m : rows)
    s += fmt::format("{},{},{},{:.10g},{:.10g},{:.10g}\n", m.method, m.seeds, m.reached, m.mean_final_return,
                     m.stderr_final_return, m.mean_successful_episodes);
  return s;
}

inline RunReport run_density(const ExperimentConfig& cfg, const fs::path& dir) {
  RunReport rep{dir};
  const auto points = envs::toy_sample(cfg.density.dataset);
  std::string sweep = std::string(kSweepHeader) + "\n";
  for (double sigma : cfg.density.sigmas) {
    const std::string tag = fmt::format("s{:g}", sigma);
    const auto analytic = smoothed_grid(points, cfg.density.grid, sigma, true);
    ExemplarArch arch = cfg.loop.arch;
    arch.sigma = sigma;
    TrainConfig tc = cfg.loop.train;
    tc.seed = derive_seed(cfg.seeds.front(), Stream::grid);
    const auto learned = grid_eval_trained(points, cfg.density.grid, tc, arch, true);
    write_grid_pair(analytic, dir / "grids", "analytic_" + tag);
    write_grid_pair(learned, dir / "grids", "learned_" + tag);
    sweep += fmt::format("{:g},{:.10g},{:.10g},{:.10g}\n", sigma, roughness(analytic), roughness(learned),
                         total_variation(analytic, learned));
  }
  write_text(dir / "sweep.csv", sweep);
  return rep;
}

inline RunReport run_compare(const ExperimentConfig& cfg, const fs::path& dir) {
  RunReport rep{dir};
  if (cfg.metric == CompareMetric::pseudo_count) {
    if (cfg.env.kind != EnvKind::chain) throw ConfigError("pseudo_count comparison needs the chain environment");
    const envs::ChainMdp chain(cfg.env.chain_states, cfg.env.slip, cfg.env.horizon);
    std::string csv = std::string(kFidelityHeader) + "\n";
    for (const auto& m : cfg.methods)
      for (auto s : cfg.seeds) {
        LoopConfig l = m.loop;
        l.workers = cfg.workers;
        const auto r = chain_fidelity(chain, l, cfg.fidelity.buffer_states, s);
        rep.fidelity.emplace_back(m.name, r.spearman);
        csv += fmt::format("{},{},{:.10g},{}\n", m.name, s, r.spearman, r.visited.size());
      }
    write_text(dir / "compare.csv", csv);
    write_text(dir / "compare.txt", tabulate(csv));
    return rep;
  }
  for (const auto& m : cfg.methods)
    for (auto s : cfg.seeds) {
      const auto out = run_explore_seed(cfg, m.loop, s, dir / m.name / seed_dir(s));
      rep.scores.push_back(score(m.name, s, out.result));
    }
  rep.summary = summarize(rep.scores);
  write_text(dir / "compare.csv", scores_csv(rep.scores));
  const std::string summary = summary_csv(rep.summary);
  write_text(dir / "summary.csv", summary);
  write_text(dir / "summary.txt", tabulate(summary));
  return rep;
}

}  // namespace detail

/// Executes a validated config into `dir`: writes config.cfg (the config
/// text as given) and manifest.yaml, then the mode's artifacts. On failure
/// the manifest records the error and a RunError is thrown.
inline RunReport run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  detail::write_text(dir / "config.cfg", cfg.source);
  const char* mode = cfg.mode == Mode::density ? "density" : cfg.mode == Mode::explore ? "explore" : "compare";
  detail::Manifest manifest(std::string("run ") + mode);
  manifest.seeds(cfg.seeds).field("workers", cfg.workers);
  try {
    RunReport rep;
    switch (cfg.mode) {
      case Mode::density:
        rep = detail::run_density(cfg, dir);
        break;
      case Mode::compare:
        rep = detail::run_compare(cfg, dir);
        break;
      case Mode::explore:
        rep.dir = dir;
        for (auto s : cfg.seeds) {
          const fs::path sub = cfg.seeds.size() == 1 ? dir : dir / detail::seed_dir(s);
          rep.scores.push_back(detail::score("run", s, run_explore_seed(cfg, cfg.loop, s, sub).result));
        }
        break;
    }
    manifest.write(dir / "manifest.yaml", "ok");
    return rep;
  } catch (const TrainingError& e) {
    manifest.write(dir / "manifest.yaml", "failed", e.what(), static_cast<int>(e.index()));
    throw RunError(e.what(), dir.string());
  } catch (const ConfigError&) {
    manifest.write(dir / "manifest.yaml", "failed", "configuration error");
    throw;
  } catch (const std::exception& e) {
    manifest.write(dir / "manifest.yaml", "failed", e.what());
    throw RunError(e.what(), dir.string());
  }
}

/// Grid spec file: `bounds: [x0, y0, x1, y1]`, `cells: [nx, ny]`, optional
/// `normalize` (default true) and `seed`.
struct GridRequest {
  GridSpec spec = GridSpec::bounds(0, 0, 1, 1, 32, 32);
  bool normalize = true;
  std::uint64_t seed = 0;
};

inline GridRequest load_grid_request(const std::string& path) {
  YAML::Node n;
  try {
    n = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot read grid spec " + path + ": " + e.what());
  }
  detail::SchemaCheck c;
  GridRequest g;
  if (c.mapping(n, "", {"bounds", "cells", "normalize", "seed"})) {
    YAML::Node spec;
    if (n["bounds"]) spec["bounds"] = n["bounds"];
    if (n["cells"]) spec["cells"] = n["cells"];
    detail::read_grid(c, spec, "grid", g.spec, nullptr);
    c.read(n, "", "normalize", g.normalize);
    c.read(n, "", "seed", g.seed);
  }
  if (!c.errors.empty()) throw ConfigError(detail::format_errors(c.errors));
  return g;
}

/// Density grids from a checkpoint: the amortized model when present,
/// otherwise a freshly trained exemplar bank over the stored batch states;
/// plus the histogram of the stored states.
inline std::vector<std::string> export_grids(const Checkpoint& ck, const GridRequest& req, const fs::path& dir) {
  std::vector<std::string> written;
  const auto states = get_states(ck, "states.final_batch");
  if (const auto m = get_amortized(ck)) {
    detail::write_grid_pair(grid_eval(*m, req.spec, req.seed, req.normalize), dir, "exemplar");
    written.push_back("exemplar");
  } else if (!states.empty()) {
    if (states.front().size() != 2) throw ConfigError("grid: stored states are not 2-D");
    TrainConfig tc;
    tc.seed = req.seed;
    detail::write_grid_pair(grid_eval_trained(states, req.spec, tc, ExemplarArch{}, req.normalize), dir, "exemplar");
    written.push_back("exemplar");
  } else {
    throw ConfigError("checkpoint holds neither a density model nor states");
  }
  if (!states.empty() && states.front().size() == 2) {
    detail::write_grid_pair(histogram_density(states, req.spec), dir, "empirical");
    written.push_back("empirical");
  }
  return written;
}

}  // namespace ex2
