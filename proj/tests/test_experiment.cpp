#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "nbvsplat/experiment.hpp"
#include "nbvsplat/io.hpp"

using namespace nbv;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.scene.seed = 3;
  c.scene.gaussians = 8;
  c.scene.timesteps = 1;
  c.scene.cameras.count = 6;
  c.scene.cameras.test_count = 2;
  c.scene.cameras.image_size = 12;
  c.strategies = {Strategy::OursFull};
  c.seeds = {0};
  c.schedule.initial_views = 2;
  c.schedule.rounds = 2;
  c.schedule.iterations_per_round = 5;
  c.schedule.final_iterations = 5;
  c.output_dir = out;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nbv_experiment_" + name);
  fs::remove_all(p);
  return p;
}

int line_count(const std::string& s) { return int(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("one strategy and one seed give one row and one selection log") {
  const fs::path out = scratch("single");
  const ExperimentResult r = run_experiment(tiny_config(out));
  REQUIRE(r.runs.size() == 1);
  CHECK(r.all_ok());
  CHECK(r.runs[0].n_views == 4);
  CHECK(r.runs[0].records.size() == 2);
  CHECK(r.runs[0].curve.size() == 3);

  const std::string results = read_text(out / "results.csv");
  CHECK(results.rfind("strategy,seed,psnr,ssim,miou,macc,n_views,wall_seconds\n", 0) == 0);
  CHECK(line_count(results) == 2);
  CHECK(fs::exists(out / "selections" / "ours-full_s0.csv"));
  CHECK(fs::exists(out / "heatmaps" / "ours-full_s0.pgm"));
  CHECK(fs::exists(out / "strips" / "ours-full_s0.ppm"));
  CHECK(fs::exists(out / "checkpoints" / "ours-full_s0.ckpt"));
  CHECK_FALSE(fs::exists(out / "failures.csv"));
  fs::remove_all(out);
}

TEST_CASE("a rerun reproduces every output byte for byte") {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  ExperimentConfig cfg = tiny_config(a);
  cfg.strategies = {Strategy::Random, Strategy::OursFull};
  run_experiment(cfg);
  cfg.output_dir = b;
  run_experiment(cfg);
  for (const char* f : {"results.csv", "summary.csv", "metrics.csv", "selections/random_s0.csv",
                        "selections/ours-full_s0.csv"})
    CHECK_MESSAGE(read_text(a / f) == read_text(b / f), f);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("failing runs are recorded and the sweep still finishes") {
  const fs::path out = scratch("failures");
  ExperimentConfig cfg = tiny_config(out);
  cfg.seeds = {0, 1};
  cfg.train.divergence_threshold = 1e-9;  // every training step diverges
  std::ostringstream log;
  const ExperimentResult r = run_experiment(cfg, &log);
  REQUIRE(r.runs.size() == 2);
  CHECK_FALSE(r.all_ok());
  for (const RunResult& run : r.runs) {
    CHECK_FALSE(run.ok);
    CHECK_FALSE(run.error.empty());
  }
  CHECK(log.str().find("FAILED") != std::string::npos);
  const std::string failures = read_text(out / "failures.csv");
  CHECK(line_count(failures) == 3);
  CHECK(fs::exists(out / "results.csv"));
  fs::remove_all(out);
}

TEST_CASE("config JSON round trip and validation") {
  ExperimentConfig cfg = tiny_config("out/x");
  cfg.lambda_fisher = 1e-5;
  cfg.weights = {1.0, 0.5, 2.0};
  const ExperimentConfig back = nlohmann::json(cfg).get<ExperimentConfig>();
  CHECK(back.lambda_fisher == 1e-5);
  CHECK(back.weights.semantic == 0.5);
  CHECK(back.weights.deformation == 2.0);
  CHECK(back.strategies == cfg.strategies);
  CHECK(back.output_dir == cfg.output_dir);

  ExperimentConfig bad = cfg;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), SpecError);
  bad = cfg;
  bad.strategies.clear();
  CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("spearman and median") {
  const std::vector<double> a{1, 2, 3, 4}, b{10, 30, 20, 40}, ties{1, 1, 2, 2};
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK(spearman(a, b) == doctest::Approx(0.8));
  CHECK(spearman(ties, a) == doctest::Approx(std::sqrt(0.8)));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("comparison strip lays out truth, render and error") {
  Image gt(2, 2, 3, 0.5), render(2, 2, 3, 0.25);
  const Image strip = comparison_strip(gt, render);
  CHECK(strip.width == 6);
  CHECK(strip.at(0, 0, 0) == 0.5);
  CHECK(strip.at(0, 2, 0) == 0.25);
  CHECK(strip.at(1, 5, 2) == doctest::Approx(0.25));
}
