// ex2 command line: run, compare, grid.
#include "ex2/runner.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <iostream>
#include <optional>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
};

ex2::ExperimentConfig prepare(const std::string& path, const Overrides& o) {
  auto cfg = ex2::load_config(path);
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.workers) {
    if (*o.workers < 1) throw ex2::ConfigError("--workers must be at least 1");
    cfg.workers = *o.workers;
    cfg.loop.workers = *o.workers;
    for (auto& m : cfg.methods) m.loop.workers = *o.workers;
  }
  if (!o.out.empty()) cfg.output = o.out;
  return cfg;
}

void print_report(const ex2::RunReport& rep) {
  fmt::print("artifacts: {}\n", rep.dir.string());
  for (const auto& s : rep.scores)
    fmt::print("{} seed {}: reached={} first_success_iter={} final_mean_return={:.4f}\n", s.method, s.seed,
               s.reached ? "yes" : "no", s.first_success_iter, s.final_mean_return);
  if (!rep.summary.empty()) std::cout << ex2::tabulate(ex2::detail::summary_csv(rep.summary));
  for (const auto& [name, rho] : rep.fidelity) fmt::print("{} spearman {:.4f}\n", name, rho);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-model density estimation and exploration"};
  app.require_subcommand(1);
  Overrides o;
  std::string config, checkpoint, grid_spec;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Run only this seed");
    c->add_option("--out", o.out, "Artifact directory");
    c->add_option("--workers", o.workers, "Worker threads");
  };
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config)->required();
  add_common(run);
  auto* cmp = app.add_subcommand("compare", "Run a compare-mode config");
  cmp->add_option("config", config)->required();
  add_common(cmp);
  auto* grid = app.add_subcommand("grid", "Export density grids from a checkpoint");
  grid->add_option("checkpoint", checkpoint)->required();
  grid->add_option("grid-spec", grid_spec)->required();
  grid->add_option("--out", o.out, "Output directory (default: next to the checkpoint)");
  grid->add_option("--seed", o.seed, "Evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*grid) {
      auto req = ex2::load_grid_request(grid_spec);
      if (o.seed) req.seed = *o.seed;
      const auto ck = ex2::load_checkpoint(checkpoint);
      const std::filesystem::path dir =
          o.out.empty() ? std::filesystem::path(checkpoint).parent_path() / "grid" : std::filesystem::path(o.out);
      for (const auto& name : ex2::export_grids(ck, req, dir)) fmt::print("{}/{}.csv\n", dir.string(), name);
      return kOk;
    }
    const auto cfg = prepare(config, o);
    if (*cmp && cfg.mode != ex2::Mode::compare) throw ex2::ConfigError("compare needs a config with mode: compare");
    print_report(ex2::run_experiment(cfg, cfg.output));
    return kOk;
  } catch (const ex2::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kConfigError;
  } catch (const ex2::RunError& e) {
    std::cerr << "run failed: " << e.what() << "\npartial artifacts in " << e.directory() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
