#include "ex2/runner.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ex2;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("ex2_runner_" + name);
  fs::remove_all(d);
  return d;
}

const std::string kChainExplore = R"(
version: 1
mode: explore
seeds: [4]
env: {kind: chain, states: 8, slip: 0.1, horizon: 12}
policy: {hidden: [8]}
model: {variant: k_exemplar, k: 3, hidden: [8]}
train: {steps: 20, negatives: 16}
rl: {iterations: 4, batch_size: 3}
)";

}  // namespace

TEST(Runner, ExploreWritesArtifacts) {
  const auto dir = fresh_dir("explore");
  run_experiment(parse_config(kChainExplore), dir);
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 5);
  EXPECT_EQ(slurp(dir / "config.cfg"), kChainExplore);
  EXPECT_NE(slurp(dir / "manifest.yaml").find("status: ok"), std::string::npos);
  const auto ck = load_checkpoint((dir / "checkpoint.bin").string());
  EXPECT_NO_THROW(get_policy(ck));
}

TEST(Runner, RerunIsByteIdentical) {
  const auto a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
  const auto cfg = parse_config(kChainExplore);
  run_experiment(cfg, a);
  run_experiment(cfg, b);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
}

TEST(Runner, BetaZeroMatchesBaseline) {
  const auto a = fresh_dir("beta0"), b = fresh_dir("plain");
  run_experiment(parse_config(kChainExplore + "bonus: {beta: 0}\n"), a);
  run_experiment(parse_config(kChainExplore + "bonus: {source: none}\n"), b);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
}

TEST(Runner, MultipleSeedsGetSubdirectories) {
  const auto dir = fresh_dir("seeds");
  auto text = kChainExplore;
  text.replace(text.find("seeds: [4]"), 10, "seeds: [1, 2]");
  const auto rep = run_experiment(parse_config(text), dir);
  EXPECT_EQ(rep.scores.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "seed-1" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "seed-2" / "metrics.csv"));
}

TEST(Runner, DensityModeWritesOneGridPairPerSigma) {
  const auto dir = fresh_dir("density");
  run_experiment(parse_config(R"(
version: 1
mode: density
dataset: {kind: two_moons, points: 100, seed: 1}
sweep: {sigmas: [0.05, 0.1, 0.2, 0.4], grid: {bounds: [-1.5, -1, 2.5, 1.5], cells: [6, 6]}}
model: {hidden: [8]}
train: {steps: 20, negatives: 16}
)"),
                 dir);
  int analytic = 0, learned = 0;
  for (const auto& e : fs::directory_iterator(dir / "grids")) {
    const auto name = e.path().filename().string();
    if (e.path().extension() != ".csv") continue;
    analytic += name.rfind("analytic_", 0) == 0;
    learned += name.rfind("learned_", 0) == 0;
  }
  EXPECT_EQ(analytic, 4);
  EXPECT_EQ(learned, 4);
  const std::string sweep = slurp(dir / "sweep.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 5);
}

TEST(Runner, CompareSingleMethodOneRow) {
  const auto dir = fresh_dir("compare_one");
  const auto rep = run_experiment(parse_config(R"(
version: 1
mode: compare
seeds: [1]
env: {kind: chain, states: 6, horizon: 8}
policy: {hidden: [4]}
train: {steps: 10, negatives: 8}
rl: {iterations: 2, batch_size: 2}
methods: [{name: k5}]
)"),
                                   dir);
  const std::string csv = slurp(dir / "compare.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  ASSERT_EQ(rep.summary.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "k5" / "seed-1" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.txt"));
}

TEST(Runner, CompareRerunIdenticalTable) {
  const std::string text = R"(
version: 1
mode: compare
seeds: [1, 2, 3]
env: {kind: chain, states: 6, horizon: 8}
policy: {hidden: [4]}
train: {steps: 10, negatives: 8}
rl: {iterations: 2, batch_size: 2}
methods: [{name: k}, {name: none, bonus: {source: none}}]
)";
  const auto a = fresh_dir("cmp_a"), b = fresh_dir("cmp_b");
  run_experiment(parse_config(text), a);
  run_experiment(parse_config(text), b);
  EXPECT_EQ(slurp(a / "compare.csv"), slurp(b / "compare.csv"));
  EXPECT_EQ(slurp(a / "summary.txt"), slurp(b / "summary.txt"));
}

TEST(Runner, ChainPseudoCountCompare) {
  const auto dir = fresh_dir("chain");
  const auto rep = run_experiment(parse_config(R"(
version: 1
mode: compare
seeds: [1]
compare: {metric: pseudo_count, buffer_states: 2000}
env: {kind: chain, states: 20, slip: 0.1, horizon: 50}
model: {hidden: [16, 16]}
train: {steps: 1000, negatives: 64}
methods:
  - {name: exemplar, model: {variant: single}}
  - {name: histogram, bonus: {source: histogram}}
  - {name: kde, bonus: {source: kde, kde_bandwidth: 0.5}}
)"),
                                   dir);
  ASSERT_EQ(rep.fidelity.size(), 3u);
  for (const auto& [name, rho] : rep.fidelity) EXPECT_GT(rho, 0.9) << name;
  EXPECT_NE(slurp(dir / "compare.txt").find("exemplar"), std::string::npos);
}

TEST(Runner, PseudoCountNeedsChain) {
  const auto dir = fresh_dir("pc_maze");
  EXPECT_THROW(run_experiment(parse_config(R"(
version: 1
mode: compare
compare: {metric: pseudo_count}
env: {kind: maze}
methods: [{name: a}]
)"),
                              dir),
               ConfigError);
  EXPECT_NE(slurp(dir / "manifest.yaml").find("status: failed"), std::string::npos);
}

TEST(Runner, MidRunFailureWritesManifest) {
  const auto dir = fresh_dir("fail");
  const auto layout = fs::temp_directory_path() / "ex2_runner_vanishing_layout.yaml";
  fs::copy_file(fs::path(EX2_CONFIG_DIR) / "four_rooms.yaml", layout, fs::copy_options::overwrite_existing);
  const auto cfg = parse_config("version: 1\nmode: explore\nenv: {kind: maze, layout: " + layout.string() + "}\n");
  fs::remove(layout);
  EXPECT_ANY_THROW(run_experiment(cfg, dir));
  const std::string m = slurp(dir / "manifest.yaml");
  EXPECT_NE(m.find("status: failed"), std::string::npos);
  EXPECT_NE(m.find("error"), std::string::npos);
}

TEST(Runner, GridExportFromCheckpoint) {
  const auto dir = fresh_dir("grid_export");
  run_experiment(parse_config(R"(
version: 1
mode: explore
seeds: [2]
env: {kind: maze, horizon: 20}
policy: {hidden: [8]}
model: {variant: amortized, amortized_hidden: [8], latent_dim: 2}
train: {steps: 10, negatives: 8}
rl: {iterations: 2, batch_size: 2}
)"),
                 dir);
  const auto ck = load_checkpoint((dir / "checkpoint.bin").string());
  GridRequest req;
  req.spec = GridSpec::bounds(0, 0, 1, 1, 4, 4);
  const auto files = export_grids(ck, req, dir / "grid");
  EXPECT_EQ(files, (std::vector<std::string>{"exemplar", "empirical"}));
  for (const auto& f : files) {
    EXPECT_TRUE(fs::exists(dir / "grid" / (f + ".csv"))) << f;
    EXPECT_TRUE(fs::exists(dir / "grid" / (f + ".pgm"))) << f;
  }
}

TEST(Runner, SummaryStatistics) {
  std::vector<SeedScore> rows;
  for (int i = 0; i < 4; ++i) {
    SeedScore s{"m", static_cast<std::uint64_t>(i)};
    s.reached = i % 2 == 0;
    s.final_mean_return = i;
    rows.push_back(s);
  }
  const auto sum = summarize(rows);
  ASSERT_EQ(sum.size(), 1u);
  EXPECT_EQ(sum[0].reached, 2);
  EXPECT_DOUBLE_EQ(sum[0].mean_final_return, 1.5);
  // Sample standard deviation of 0..3 is sqrt(5/3).
  EXPECT_NEAR(sum[0].stderr_final_return, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
}
