// Command-line front end: strategy sweeps, heatmaps from checkpoints, the
// oracle rank study and dataset export. No environment variables are read.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nbvsplat/experiment.hpp"
#include "nbvsplat/io.hpp"

using namespace nbv;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_run(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& strategies,
            const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config);
  if (seed) cfg.seeds = {*seed};
  if (!strategies.empty()) {
    cfg.strategies.clear();
    for (const auto& name : split(strategies, ',')) cfg.strategies.push_back(strategy_from_name(name));
  }
  if (!out.empty()) cfg.output_dir = out;
  const ExperimentResult result = run_experiment(cfg, &std::cerr);
  std::cout << summary_csv(result.runs, cfg.strategies);
  if (!result.all_ok()) {
    std::cerr << "some runs failed, see " << (cfg.output_dir / "failures.csv").string() << '\n';
    return 1;
  }
  return 0;
}

int cmd_heatmap(const std::string& path, int view, int t, const std::string& out) {
  write_pgm(out, normalize_heatmap(checkpoint_heatmap(path, view, t)));
  return 0;
}

int cmd_oracle(const std::string& config, const std::string& out) {
  const OracleStudyConfig cfg = load_oracle_config(config);
  const OracleStudyResult r = run_oracle_study(cfg, &std::cerr);
  const std::string table = oracle_csv(r);
  if (!out.empty()) write_text(out, table);
  std::cout << table << "spearman," << r.spearman << '\n';
  return 0;
}

int cmd_generate(const std::string& scene, const std::string& out) {
  const SceneSpec spec = nlohmann::json::parse(read_text(scene)).get<SceneSpec>();
  write_dataset(generate(spec), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-best-view selection for semantic Gaussian splatting"};
  app.require_subcommand(1);

  std::string config, strategies, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "run a strategy sweep");
  run->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed-override", seed, "run a single seed");
  run->add_option("--strategies", strategies, "comma-separated subset of strategies");
  run->add_option("--out", out_dir, "output directory");

  std::string ckpt, heat_out;
  int view = 0, t = 0;
  auto* heat = app.add_subcommand("heatmap", "Fisher heatmap of a saved model");
  heat->add_option("--checkpoint", ckpt, "run checkpoint")->required()->check(CLI::ExistingFile);
  heat->add_option("--view", view, "pool camera index")->required();
  heat->add_option("--t", t, "timestep index");
  heat->add_option("--out", heat_out, "output PGM")->required();

  std::string oracle_config, oracle_out;
  auto* oracle = app.add_subcommand("oracle", "rank agreement between selection scores and retraining gains");
  oracle->add_option("--config", oracle_config, "oracle study config (JSON)")->required()->check(CLI::ExistingFile);
  oracle->add_option("--out", oracle_out, "CSV of per-candidate medians");

  std::string scene, data_out;
  auto* gen = app.add_subcommand("generate", "render a synthetic dataset to disk");
  gen->add_option("--scene", scene, "scene spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", data_out, "dataset directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, seed, strategies, out_dir);
    if (*heat) return cmd_heatmap(ckpt, view, t, heat_out);
    if (*oracle) return cmd_oracle(oracle_config, oracle_out);
    if (*gen) return cmd_generate(scene, data_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
