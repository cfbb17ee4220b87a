// experiment.hpp
//
// Strategy-comparison sweeps over a synthetic scene and the oracle study that
// checks whether information-gain scores rank candidates the way actual
// retraining does.
//
// Output layout of run_experiment:
//   results.csv            one row per (strategy, seed)
//   summary.csv            mean and std per strategy
//   metrics.csv            test metrics after every loop stage
//   failures.csv           only when a run threw
//   selections/<run>.csv   per-candidate scores of every round
//   heatmaps/<run>.pgm     Fisher heatmap of the final model, first test view
//   strips/<run>.ppm       ground truth | render | absolute error, first test view
//   checkpoints/<run>.ckpt final loop state
// where <run> is "<strategy>_s<seed>".

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nbvsplat/selection.hpp"
#include "nbvsplat/synth.hpp"

namespace nbv {

enum class RunMode { Auto, Static, Dynamic };  // Auto: dynamic when the scene has more than one timestep

struct ExperimentConfig {
  SceneSpec scene;
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds;
  Schedule schedule;
  double lambda_fisher = kDefaultFisherLambda;
  ComponentWeights weights;
  DeformationScoreChoice deformation_score = DeformationScoreChoice::Auto;
  int hutchinson_probes = 4;
  TrainConfig train;
  ModelInitSpec init;
  RunMode mode = RunMode::Auto;
  // The run seed is added to scene.seed, so every seed sees a different scene.
  bool vary_scene_with_seed = true;
  // Wall-clock time breaks byte-identical reruns, so it is opt-in.
  bool record_wall_time = false;
  bool write_checkpoints = true;
  bool write_images = true;
  std::filesystem::path output_dir = "out";

  bool dynamic() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Reads a config file. "scene_path" is resolved against the file's directory
/// and takes the place of an inline "scene" object.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct StagePoint {
  int stage = 0;
  long iteration = 0;
  int views = 0;
  EvalMetrics metrics;
};

struct RunResult {
  Strategy strategy = Strategy::Random;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalMetrics metrics;
  int n_views = 0;
  double wall_seconds = 0.0;
  std::vector<StagePoint> curve;
  std::vector<SelectionRecord> records;
};

std::string run_name(Strategy s, std::uint64_t seed);

/// Scene of one run after the seed offset.
SceneSpec run_scene(const ExperimentConfig& cfg, std::uint64_t seed);

/// One acquisition loop plus final evaluation. Writes the per-run artifacts
/// when out_dir is non-empty. Errors propagate.
RunResult run_single(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed,
                     const std::filesystem::path& out_dir = {});

struct ExperimentResult {
  std::vector<RunResult> runs;
  bool all_ok() const;
};

/// Every (strategy, seed) cell; a failing cell is recorded and the others still run.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

std::string results_csv(std::span<const RunResult> runs, bool wall_time);
std::string summary_csv(std::span<const RunResult> runs, std::span<const Strategy> order);
std::string metrics_csv(std::span<const RunResult> runs);

/// Fisher heatmap of a model at one view and time, scaled to 0..255 and saved as PGM.
/// Dynamic models use rows over the deformation parameters.
Image model_heatmap(const Model& model, const CameraView& view, double t);
void emit_heatmap(const Model& model, const CameraView& view, double t, const std::filesystem::path& out);

/// Heatmap from a run checkpoint: `view` indexes the pool cameras stored with
/// the run and `timestep` the scene's time grid. Values are unscaled.
Image checkpoint_heatmap(const std::filesystem::path& checkpoint, int view, int timestep);

/// ground truth | render | |difference|, side by side.
Image comparison_strip(const Image& gt, const Image& render);

// ---------------------------------------------------------------------------
// Oracle study

struct OracleStudyConfig {
  SceneSpec scene;
  std::vector<int> train_cameras{0, 1};
  std::vector<int> candidate_cameras{2, 3, 4, 5, 6, 7};
  int pretrain_iterations = 200;
  int oracle_iterations = 150;
  std::vector<std::uint64_t> seeds;  // model initialization and trainer order
  double lambda_fisher = kDefaultFisherLambda;
  ComponentWeights weights{1.0, 1.0, 0.0};
  TrainConfig train;
  ModelInitSpec init;

  void validate() const;
};

void to_json(nlohmann::json& j, const OracleStudyConfig& c);
void from_json(const nlohmann::json& j, OracleStudyConfig& c);
OracleStudyConfig load_oracle_config(const std::filesystem::path& path);

struct OracleStudyResult {
  std::vector<int> candidate_ids;
  std::vector<std::vector<double>> scores;  // [seed][candidate], combined selection score
  std::vector<std::vector<double>> drops;   // [seed][candidate], test PSNR gain
  std::vector<double> median_score;
  std::vector<double> median_drop;
  double spearman = 0.0;
};

/// Per seed: pretrain on the training cameras, score the candidates, then
/// measure each candidate's oracle error drop. The reported correlation is
/// between the per-candidate medians over seeds.
OracleStudyResult run_oracle_study(const OracleStudyConfig& cfg, std::ostream* log = nullptr);
std::string oracle_csv(const OracleStudyResult& r);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

double median(std::vector<double> v);

}  // namespace nbv
