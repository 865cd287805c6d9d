#include "ex2/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ex2;

namespace {

const std::string kMinimal = R"(
version: 1
mode: explore
seeds: [3]
env: {kind: chain, states: 6, slip: 0.0, horizon: 8}
)";

ExperimentConfig shipped(const char* name) {
  return load_config((std::filesystem::path(EX2_CONFIG_DIR) / name).string());
}

// Everything a method's run depends on except grids and the per-run seed.
void expect_same_run(const LoopConfig& a, const LoopConfig& b, const std::string& name) {
  SCOPED_TRACE(name);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.batch_size, b.batch_size);
  EXPECT_EQ(a.gamma, b.gamma);
  EXPECT_EQ(a.policy_lr, b.policy_lr);
  EXPECT_EQ(a.source, b.source);
  EXPECT_EQ(a.bonus.kind, b.bonus.kind);
  EXPECT_EQ(a.bonus.beta, b.bonus.beta);
  EXPECT_EQ(a.variant, b.variant);
  EXPECT_EQ(a.k, b.k);
  EXPECT_EQ(a.arch.hidden, b.arch.hidden);
  EXPECT_EQ(a.arch.sigma, b.arch.sigma);
  EXPECT_EQ(a.arch.standardize, b.arch.standardize);
  EXPECT_EQ(a.train.negatives_per_step, b.train.negatives_per_step);
  EXPECT_EQ(a.train.positives_per_step, b.train.positives_per_step);
  EXPECT_EQ(a.train.positive_fraction, b.train.positive_fraction);
  EXPECT_EQ(a.train.steps, b.train.steps);
  EXPECT_EQ(a.train.lr_shared, b.train.lr_shared);
  EXPECT_EQ(a.train.lr_head, b.train.lr_head);
  EXPECT_EQ(a.latent_dim, b.latent_dim);
  EXPECT_EQ(a.amortized_hidden, b.amortized_hidden);
  EXPECT_EQ(a.kl_weight, b.kl_weight);
  EXPECT_EQ(a.eval_samples, b.eval_samples);
  EXPECT_EQ(a.kde_bandwidth, b.kde_bandwidth);
  EXPECT_EQ(a.kde_reference, b.kde_reference);
  EXPECT_EQ(a.buffer_capacity, b.buffer_capacity);
  EXPECT_EQ(a.stop_on_success, b.stop_on_success);
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalExplore) {
  const auto c = parse_config(kMinimal);
  EXPECT_EQ(c.mode, Mode::explore);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(c.env.kind, EnvKind::chain);
  EXPECT_EQ(c.env.chain_states, 6);
  EXPECT_EQ(c.source, kMinimal);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"maze_k5.cfg", "maze_amortized.cfg", "maze_compare.cfg", "chain.cfg", "toy_density.cfg"}) {
    const auto path = std::filesystem::path(EX2_CONFIG_DIR) / name;
    EXPECT_NO_THROW(load_config(path.string())) << name;
  }
  const auto maze = load_config((std::filesystem::path(EX2_CONFIG_DIR) / "maze_amortized.cfg").string());
  EXPECT_EQ(maze.loop.variant, Variant::amortized);
  EXPECT_TRUE(std::filesystem::path(maze.env.layout).is_absolute());
  EXPECT_NO_THROW(maze.env.make());
}

TEST(Config, MazeCompareMatchesSingleMethodConfigs) {
  const auto cmp = shipped("maze_compare.cfg");
  const auto k5 = shipped("maze_k5.cfg"), am = shipped("maze_amortized.cfg");
  ASSERT_EQ(cmp.methods.size(), 4u);
  EXPECT_EQ(cmp.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(cmp.env.layout, k5.env.layout);
  EXPECT_EQ(cmp.env.horizon, k5.env.horizon);
  auto stopping = [](LoopConfig l) {
    l.stop_on_success = true;
    return l;
  };
  LoopConfig beta0 = stopping(k5.loop), kde = stopping(k5.loop);
  beta0.bonus.beta = 0.0;
  kde.source = BonusSource::kde;
  EXPECT_EQ(cmp.methods[0].name, "ex2_k5");
  expect_same_run(cmp.methods[0].loop, stopping(k5.loop), "ex2_k5");
  EXPECT_EQ(cmp.methods[1].name, "ex2_amortized");
  expect_same_run(cmp.methods[1].loop, stopping(am.loop), "ex2_amortized");
  EXPECT_EQ(cmp.methods[2].name, "beta0");
  expect_same_run(cmp.methods[2].loop, beta0, "beta0");
  EXPECT_EQ(cmp.methods[3].name, "kde");
  expect_same_run(cmp.methods[3].loop, kde, "kde");
}

TEST(Config, ReportsEveryViolation) {
  const std::string msg = error_of(R"(
version: 2
mode: explore
seeds: []
env: {kind: chain}
model: {k: 0, colour: red}
rl: {gamma: 1.5}
)");
  EXPECT_NE(msg.find("version"), std::string::npos);
  EXPECT_NE(msg.find("seeds"), std::string::npos);
  EXPECT_NE(msg.find("model.k"), std::string::npos);
  EXPECT_NE(msg.find("model.colour: unknown key"), std::string::npos);
  EXPECT_NE(msg.find("rl.gamma"), std::string::npos);
  EXPECT_NE(msg.find("5 problems"), std::string::npos);
}

TEST(Config, RejectsBadEnums) {
  EXPECT_NE(error_of(kMinimal + "bonus: {kind: loud}\n").find("bonus.kind"), std::string::npos);
  EXPECT_NE(error_of("version: 1\nmode: sideways\n").find("mode"), std::string::npos);
}

TEST(Config, RejectsBadYaml) {
  EXPECT_THROW(parse_config("version: [1"), ConfigError);
  EXPECT_THROW(parse_config("- 1\n- 2\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST(Config, ExploreNeedsEnv) {
  EXPECT_NE(error_of("version: 1\nmode: explore\n").find("env"), std::string::npos);
}

TEST(Config, HistogramNeedsGrid) {
  EXPECT_NE(error_of(kMinimal + "bonus: {source: histogram}\n").find("histogram_grid"), std::string::npos);
  EXPECT_NO_THROW(parse_config(kMinimal + "bonus: {source: histogram, histogram_grid: {bounds: [0, 0, 1, 1], cells: [4, 4]}}\n"));
}

TEST(Config, CompareMethodsInheritSharedSections) {
  const auto c = parse_config(R"(
version: 1
mode: compare
seeds: [1, 2]
env: {kind: chain, states: 6, horizon: 8}
train: {steps: 7}
methods:
  - {name: a}
  - name: b
    train: {steps: 9}
    bonus: {beta: 0}
)");
  ASSERT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.methods[0].loop.train.steps, 7);
  EXPECT_EQ(c.methods[1].loop.train.steps, 9);
  EXPECT_EQ(c.methods[1].loop.bonus.beta, 0.0);
}

TEST(Config, CompareSingleMethodAllowed) {
  EXPECT_NO_THROW(parse_config(R"(
version: 1
mode: compare
env: {kind: chain}
methods: [{name: only}]
)"));
}

TEST(Config, CompareRejectsMismatchedEnvAndDuplicates) {
  const std::string msg = error_of(R"(
version: 1
mode: compare
env: {kind: chain, states: 6}
methods:
  - {name: a, env: {kind: chain, states: 7}}
  - {name: a}
)");
  EXPECT_NE(msg.find("environment differs"), std::string::npos);
  EXPECT_NE(msg.find("duplicate method name"), std::string::npos);
}

TEST(Config, MethodsOnlyInCompare) {
  EXPECT_NE(error_of(kMinimal + "methods: [{name: a}]\n").find("only allowed in compare"), std::string::npos);
}

TEST(Config, DensityMode) {
  const auto c = parse_config(R"(
version: 1
mode: density
dataset: {kind: ring, points: 40, seed: 2}
sweep: {sigmas: [0.1, 0.3], grid: {bounds: [-2, -2, 2, 2], cells: [8, 8]}}
)");
  EXPECT_EQ(c.density.dataset.kind, envs::ToyKind::ring);
  EXPECT_EQ(c.density.sigmas.size(), 2u);
  EXPECT_EQ(c.density.grid.nx, 8);
  EXPECT_NE(error_of("version: 1\nmode: density\n").find("dataset"), std::string::npos);
  EXPECT_NE(error_of("version: 1\nmode: density\ndataset: {kind: ring}\nsweep: {sigmas: [0]}\n").find("sweep.sigmas"),
            std::string::npos);
}
