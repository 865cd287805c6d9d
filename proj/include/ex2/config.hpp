#pragma once

#include "ex2/core.hpp"
#include "ex2/density.hpp"
#include "ex2/envs.hpp"
#include "ex2/train_loop.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

namespace ex2 {

inline constexpr int kConfigVersion = 1;

enum class Mode { density, explore, compare };
enum class EnvKind { maze, chain, bandit };
/// What compare reports per method and seed.
enum class CompareMetric { success, pseudo_count };

struct EnvSpec {
  EnvKind kind = EnvKind::maze;
  std::string layout;  // resolved path; empty: built-in four-room layout
  int horizon = 200;
  int chain_states = 20;
  double slip = 0.1;
  std::vector<double> arms{1.0, 0.0};

  bool operator==(const EnvSpec&) const = default;

  std::unique_ptr<rl::Mdp> make() const {
    switch (kind) {
      case EnvKind::maze: {
        auto m = std::make_unique<envs::Maze2D>(layout.empty() ? envs::Maze2D::four_rooms()
                                                               : envs::Maze2D::load_layout(layout));
        m->max_steps = horizon;
        m->validate();
        return m;
      }
      case EnvKind::chain:
        return std::make_unique<envs::ChainMdp>(chain_states, slip, horizon);
      case EnvKind::bandit:
        return std::make_unique<envs::Bandit>(arms);
    }
    throw ConfigError("unknown environment kind");
  }
};

struct PolicySpec {
  std::vector<int> hidden{32, 32};
  double init_log_std = 0.0;
  double entropy_bonus = 0.0;
};

/// Density mode: a toy dataset and a sweep over noise levels.
struct DensitySpec {
  envs::ToyDataset2D dataset;
  std::vector<double> sigmas{0.05, 0.1, 0.2, 0.4};
  GridSpec grid = GridSpec::bounds(-2.0, -1.5, 2.5, 2.5, 32, 32);
};

/// Pseudo-count comparison on the chain: a buffer filled by the uniform
/// policy, then every buffered state is scored.
struct FidelitySpec {
  int buffer_states = 5000;
};

struct MethodSpec {
  std::string name;
  LoopConfig loop;
};

struct ExperimentConfig {
  Mode mode = Mode::explore;
  std::vector<std::uint64_t> seeds{0};
  int workers = 1;
  std::string output = "runs/out";

  EnvSpec env;
  PolicySpec policy;
  LoopConfig loop;
  DensitySpec density;
  CompareMetric metric = CompareMetric::success;
  FidelitySpec fidelity;
  std::vector<MethodSpec> methods;  // compare mode

  std::string source;  // config text as read, for the run snapshot
};

namespace detail {

/// Collects every schema violation instead of stopping at the first.
class SchemaCheck {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  bool mapping(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed) {
    if (!n.IsMap()) {
      fail(path, "expected a mapping");
      return false;
    }
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(join(path, key), "unknown key");
    }
    return true;
  }

  template <class T>
  void read(const YAML::Node& parent, const std::string& path, const std::string& key, T& out) {
    const YAML::Node n = parent[key];
    if (!n) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(join(path, key), "wrong type");
    }
  }

  template <class E>
  void read_enum(const YAML::Node& parent, const std::string& path, const std::string& key,
                 const std::vector<std::pair<std::string, E>>& names, E& out) {
    std::string s;
    const YAML::Node n = parent[key];
    if (!n) return;
    try {
      s = n.as<std::string>();
    } catch (const YAML::Exception&) {
      fail(join(path, key), "wrong type");
      return;
    }
    for (const auto& [name, v] : names)
      if (name == s) {
        out = v;
        return;
      }
    std::string list;
    for (const auto& [name, v] : names) list += (list.empty() ? "" : ", ") + name;
    fail(join(path, key), "'" + s + "' is not one of {" + list + "}");
  }

  void require(bool ok, const std::string& path, const std::string& msg) {
    if (!ok) fail(path, msg);
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
};

inline void read_grid(SchemaCheck& c, const YAML::Node& n, const std::string& path, GridSpec& g, int* interval) {
  std::set<std::string> allowed{"bounds", "cells"};
  if (interval) allowed.insert("interval");
  if (!c.mapping(n, path, allowed)) return;
  std::vector<double> b{g.x0, g.y0, g.x0 + g.dx * g.nx, g.y0 + g.dy * g.ny};
  std::vector<int> cells{g.nx, g.ny};
  c.read(n, path, "bounds", b);
  c.read(n, path, "cells", cells);
  if (interval) c.read(n, path, "interval", *interval);
  if (b.size() != 4 || cells.size() != 2) {
    c.fail(path, "bounds needs 4 numbers and cells 2 integers");
    return;
  }
  if (!(b[2] > b[0] && b[3] > b[1]) || cells[0] < 1 || cells[1] < 1) {
    c.fail(path, "empty grid bounds or cell counts");
    return;
  }
  g = GridSpec::bounds(b[0], b[1], b[2], b[3], cells[0], cells[1]);
  if (interval && *interval < 0) c.fail(SchemaCheck::join(path, "interval"), "must be non-negative");
}

inline void read_env(SchemaCheck& c, const YAML::Node& n, const std::filesystem::path& base, EnvSpec& e) {
  if (!c.mapping(n, "env", {"kind", "layout", "horizon", "states", "slip", "arms"})) return;
  c.read_enum<EnvKind>(n, "env", "kind", {{"maze", EnvKind::maze}, {"chain", EnvKind::chain}, {"bandit", EnvKind::bandit}},
                       e.kind);
  if (e.kind == EnvKind::bandit) e.horizon = 1;
  c.read(n, "env", "horizon", e.horizon);
  c.read(n, "env", "states", e.chain_states);
  c.read(n, "env", "slip", e.slip);
  c.read(n, "env", "arms", e.arms);
  std::string layout;
  c.read(n, "env", "layout", layout);
  if (!layout.empty()) {
    const std::filesystem::path p = std::filesystem::path(layout).is_absolute() ? std::filesystem::path(layout) : base / layout;
    e.layout = p.lexically_normal().string();
    if (!std::filesystem::exists(p)) c.fail("env.layout", "file not found: " + e.layout);
  }
  c.require(e.horizon >= 1, "env.horizon", "must be at least 1");
  c.require(e.kind != EnvKind::chain || e.chain_states >= 2, "env.states", "chain needs at least 2 states");
  c.require(e.slip >= 0.0 && e.slip <= 1.0, "env.slip", "must lie in [0, 1]");
  c.require(e.kind != EnvKind::bandit || e.arms.size() >= 2, "env.arms", "bandit needs at least 2 arms");
  c.require(e.kind != EnvKind::bandit || e.horizon == 1, "env.horizon", "bandit episodes last one step");
}

/// Reads the sections that make up one method: model, train, bonus, rl.
inline void read_method_sections(SchemaCheck& c, const YAML::Node& root, LoopConfig& l) {
  if (const auto m = root["model"]; m && c.mapping(m, "model",
                                                   {"variant", "k", "hidden", "sigma", "standardize", "latent_dim",
                                                    "amortized_hidden", "kl_weight", "eval_samples"})) {
    c.read_enum<Variant>(m, "model", "variant",
                         {{"single", Variant::single}, {"k_exemplar", Variant::k_exemplar}, {"amortized", Variant::amortized}},
                         l.variant);
    c.read(m, "model", "k", l.k);
    c.read(m, "model", "hidden", l.arch.hidden);
    c.read(m, "model", "sigma", l.arch.sigma);
    c.read(m, "model", "standardize", l.arch.standardize);
    c.read(m, "model", "latent_dim", l.latent_dim);
    c.read(m, "model", "amortized_hidden", l.amortized_hidden);
    c.read(m, "model", "kl_weight", l.kl_weight);
    c.read(m, "model", "eval_samples", l.eval_samples);
    c.require(l.k >= 1, "model.k", "must be at least 1");
    c.require(l.arch.sigma >= 0.0, "model.sigma", "must be non-negative");
    c.require(l.latent_dim >= 1, "model.latent_dim", "must be at least 1");
    c.require(l.kl_weight > 0.0, "model.kl_weight", "must be positive");
    c.require(l.eval_samples >= 1, "model.eval_samples", "must be at least 1");
    for (int h : l.arch.hidden) c.require(h >= 1, "model.hidden", "layer widths must be positive");
    for (int h : l.amortized_hidden) c.require(h >= 1, "model.amortized_hidden", "layer widths must be positive");
  }
  if (const auto t = root["train"]; t && c.mapping(t, "train",
                                                   {"steps", "negatives", "positives", "positive_fraction",
                                                    "lr_shared", "lr_head"})) {
    c.read(t, "train", "steps", l.train.steps);
    c.read(t, "train", "negatives", l.train.negatives_per_step);
    c.read(t, "train", "positives", l.train.positives_per_step);
    c.read(t, "train", "positive_fraction", l.train.positive_fraction);
    c.read(t, "train", "lr_shared", l.train.lr_shared);
    c.read(t, "train", "lr_head", l.train.lr_head);
    try {
      l.train.validate();
    } catch (const ConfigError& e) {
      c.fail("train", e.what());
    }
  }
  if (const auto b = root["bonus"]; b && c.mapping(b, "bonus",
                                                   {"source", "kind", "beta", "kde_bandwidth", "kde_reference",
                                                    "histogram_grid"})) {
    c.read_enum<BonusSource>(b, "bonus", "source",
                             {{"none", BonusSource::none}, {"exemplar", BonusSource::exemplar},
                              {"kde", BonusSource::kde}, {"histogram", BonusSource::histogram}},
                             l.source);
    c.read_enum<BonusKind>(b, "bonus", "kind",
                           {{"neg_log_p", BonusKind::neg_log_p}, {"inv_sqrt_count", BonusKind::inv_sqrt_count}},
                           l.bonus.kind);
    c.read(b, "bonus", "beta", l.bonus.beta);
    c.read(b, "bonus", "kde_bandwidth", l.kde_bandwidth);
    c.read(b, "bonus", "kde_reference", l.kde_reference);
    if (const auto g = b["histogram_grid"]) {
      GridSpec spec = GridSpec::bounds(0, 0, 1, 1, 16, 16);
      read_grid(c, g, "bonus.histogram_grid", spec, nullptr);
      l.histogram_grid = spec;
    }
    c.require(l.bonus.beta >= 0.0, "bonus.beta", "must be non-negative");
    c.require(l.kde_bandwidth > 0.0, "bonus.kde_bandwidth", "must be positive");
    c.require(l.kde_reference >= 1, "bonus.kde_reference", "must be at least 1");
  }
  if (const auto r = root["rl"]; r && c.mapping(r, "rl",
                                                {"iterations", "batch_size", "gamma", "learning_rate",
                                                 "buffer_capacity", "stop_on_success"})) {
    c.read(r, "rl", "iterations", l.iterations);
    c.read(r, "rl", "batch_size", l.batch_size);
    c.read(r, "rl", "gamma", l.gamma);
    c.read(r, "rl", "learning_rate", l.policy_lr);
    c.read(r, "rl", "buffer_capacity", l.buffer_capacity);
    c.read(r, "rl", "stop_on_success", l.stop_on_success);
    c.require(l.iterations >= 0, "rl.iterations", "must be non-negative");
    c.require(l.batch_size >= 1, "rl.batch_size", "must be at least 1");
    c.require(l.gamma >= 0.0 && l.gamma <= 1.0, "rl.gamma", "must lie in [0, 1]");
    c.require(l.policy_lr > 0.0, "rl.learning_rate", "must be positive");
    c.require(l.buffer_capacity >= 1, "rl.buffer_capacity", "must be at least 1");
  }
}

inline std::string format_errors(const std::vector<std::string>& errors) {
  std::string s = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() == 1 ? "" : "s") + ")";
  for (const auto& e : errors) s += "\n  - " + e;
  return s;
}

}  // namespace detail

/// Parses and validates a config document. Every violation is reported in
/// one ConfigError. Relative paths resolve against `base_dir`.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  detail::SchemaCheck c;
  ExperimentConfig cfg;
  cfg.source = text;
  if (!c.mapping(root, "", {"version", "mode", "seeds", "workers", "output", "env", "policy", "model", "train",
                            "bonus", "rl", "grid", "dataset", "sweep", "compare", "methods"}))
    throw ConfigError(detail::format_errors(c.errors));

  int version = 0;
  c.read(root, "", "version", version);
  c.require(version == kConfigVersion, "version", "must be " + std::to_string(kConfigVersion));
  c.read_enum<Mode>(root, "", "mode", {{"density", Mode::density}, {"explore", Mode::explore}, {"compare", Mode::compare}},
                    cfg.mode);
  c.require(static_cast<bool>(root["mode"]), "mode", "required");
  c.read(root, "", "seeds", cfg.seeds);
  c.require(!cfg.seeds.empty(), "seeds", "needs at least one seed");
  c.read(root, "", "workers", cfg.workers);
  c.require(cfg.workers >= 1, "workers", "must be at least 1");
  c.read(root, "", "output", cfg.output);

  if (const auto e = root["env"]) detail::read_env(c, e, base_dir, cfg.env);
  if (const auto p = root["policy"]; p && c.mapping(p, "policy", {"hidden", "init_log_std", "entropy_bonus"})) {
    c.read(p, "policy", "hidden", cfg.policy.hidden);
    c.read(p, "policy", "init_log_std", cfg.policy.init_log_std);
    c.read(p, "policy", "entropy_bonus", cfg.policy.entropy_bonus);
    c.require(cfg.policy.entropy_bonus >= 0.0, "policy.entropy_bonus", "must be non-negative");
    for (int h : cfg.policy.hidden) c.require(h >= 1, "policy.hidden", "layer widths must be positive");
  }
  detail::read_method_sections(c, root, cfg.loop);
  if (const auto g = root["grid"]) {
    GridSpec spec = GridSpec::bounds(0, 0, 1, 1, 32, 32);
    detail::read_grid(c, g, "grid", spec, &cfg.loop.grid_interval);
    cfg.loop.grid = spec;
  }
  cfg.loop.workers = cfg.workers;

  if (cfg.mode == Mode::density) {
    const auto d = root["dataset"];
    c.require(static_cast<bool>(d), "dataset", "required in density mode");
    if (d && c.mapping(d, "dataset", {"kind", "points", "noise", "seed"})) {
      auto& ds = cfg.density.dataset;
      c.read_enum<envs::ToyKind>(d, "dataset", "kind",
                                 {{"two_moons", envs::ToyKind::two_moons}, {"ring", envs::ToyKind::ring},
                                  {"gaussian_mixture", envs::ToyKind::gaussian_mixture}},
                                 ds.kind);
      c.read(d, "dataset", "points", ds.n_points);
      c.read(d, "dataset", "noise", ds.noise);
      c.read(d, "dataset", "seed", ds.seed);
      c.require(ds.n_points >= 1, "dataset.points", "must be at least 1");
      c.require(ds.noise >= 0.0, "dataset.noise", "must be non-negative");
    }
    if (const auto s = root["sweep"]; s && c.mapping(s, "sweep", {"sigmas", "grid"})) {
      c.read(s, "sweep", "sigmas", cfg.density.sigmas);
      c.require(!cfg.density.sigmas.empty(), "sweep.sigmas", "needs at least one value");
      for (double v : cfg.density.sigmas) c.require(v > 0.0, "sweep.sigmas", "values must be positive");
      if (const auto g = s["grid"]) detail::read_grid(c, g, "sweep.grid", cfg.density.grid, nullptr);
    }
  } else {
    c.require(static_cast<bool>(root["env"]), "env", "required in explore and compare modes");
  }

  if (const auto cm = root["compare"]; cm && c.mapping(cm, "compare", {"metric", "buffer_states"})) {
    c.read_enum<CompareMetric>(cm, "compare", "metric",
                               {{"success", CompareMetric::success}, {"pseudo_count", CompareMetric::pseudo_count}},
                               cfg.metric);
    c.read(cm, "compare", "buffer_states", cfg.fidelity.buffer_states);
    c.require(cfg.fidelity.buffer_states >= 1, "compare.buffer_states", "must be at least 1");
  }
  if (cfg.mode == Mode::compare) {
    const auto ms = root["methods"];
    if (!ms || !ms.IsSequence() || ms.size() == 0) {
      c.fail("methods", "compare mode needs a non-empty list of methods");
    } else {
      std::set<std::string> names;
      for (std::size_t i = 0; i < ms.size(); ++i) {
        const std::string path = "methods[" + std::to_string(i) + "]";
        const auto m = ms[i];
        if (!c.mapping(m, path, {"name", "env", "model", "train", "bonus", "rl"})) continue;
        MethodSpec spec;
        c.read(m, path, "name", spec.name);
        c.require(!spec.name.empty(), path + ".name", "required");
        c.require(names.insert(spec.name).second, path + ".name", "duplicate method name '" + spec.name + "'");
        if (const auto e = m["env"]) {
          EnvSpec other = cfg.env;
          detail::SchemaCheck inner;
          detail::read_env(inner, e, base_dir, other);
          for (const auto& err : inner.errors) c.fail(path, err);
          c.require(other == cfg.env, path + ".env", "environment differs from the shared env");
        }
        spec.loop = cfg.loop;
        detail::SchemaCheck inner;
        detail::read_method_sections(inner, m, spec.loop);
        for (const auto& err : inner.errors) c.fail(path, err);
        cfg.methods.push_back(std::move(spec));
      }
    }
  } else if (root["methods"]) {
    c.fail("methods", "only allowed in compare mode");
  }

  // The chain compare counts states exactly; everywhere else a histogram needs its grid.
  if (cfg.mode != Mode::density && !(cfg.mode == Mode::compare && cfg.metric == CompareMetric::pseudo_count)) {
    c.require(cfg.loop.source != BonusSource::histogram || cfg.loop.histogram_grid.has_value(),
              "bonus.histogram_grid", "required by the histogram source");
    for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
      const auto& l = cfg.methods[i].loop;
      c.require(l.source != BonusSource::histogram || l.histogram_grid.has_value(),
                "methods[" + std::to_string(i) + "].bonus.histogram_grid", "required by the histogram source");
    }
  }
  if (!c.errors.empty()) throw ConfigError(detail::format_errors(c.errors));
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path());
}

}  // namespace ex2
