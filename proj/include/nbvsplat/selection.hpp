// selection.hpp
//
// Next-best-view strategies over a discrete candidate pool and the greedy
// acquisition loop that alternates training bursts with selections.
//
// The Fisher-based strategy scores each candidate with three components:
// geometric information gain (RGB rows), semantic information gain (feature
// rows) and a deformation-network score. Each component is z-normalized across
// the available candidates before the weighted sum, since their raw scales are
// unrelated.

#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nbvsplat/fisher.hpp"
#include "nbvsplat/frame.hpp"
#include "nbvsplat/trainer.hpp"

namespace nbv {

struct Candidate {
  int id = 0;
  int camera = 0;
  int timestep = 0;
  CameraView view;  // view.timestamp carries the time
};

/// Candidate cameras with an availability mask. Only camera metadata is kept;
/// ground-truth images are never visible to a strategy.
class CandidatePool {
 public:
  CandidatePool() = default;
  explicit CandidatePool(std::vector<Candidate> candidates);
  static CandidatePool from_frames(std::span<const Frame> frames);

  std::size_t size() const { return candidates_.size(); }
  const Candidate& operator[](std::size_t i) const { return candidates_[i]; }
  const Candidate& by_id(int id) const;
  bool available(std::size_t i) const { return available_[i]; }
  bool available_id(int id) const;
  int available_count() const;
  /// Indices of available candidates, optionally restricted to one timestep.
  std::vector<std::size_t> open(std::optional<int> timestep = std::nullopt) const;

  void take(int id);

 private:
  std::size_t index_of(int id) const;
  std::vector<Candidate> candidates_;
  std::vector<bool> available_;
};

struct CandidateScore {
  int id = 0;
  double geometric = 0.0;
  double semantic = 0.0;
  double deformation = 0.0;
  double combined = 0.0;
};

struct SelectionRecord {
  int round = 0;
  std::string strategy;
  std::vector<CandidateScore> scores;  // available candidates, in pool order
  int winner = -1;
  std::string tie_break;  // empty unless several candidates shared the best score
};

struct ComponentWeights {
  double geometric = 1.0;
  double semantic = 1.0;
  double deformation = 1.0;
};

enum class DeformationScoreChoice {
  Auto,        // gradient score when the same camera has an earlier known frame, else Hutchinson
  Gradient,    // always the gradient score; falls back to the model's own render as target
  Hutchinson,  // always Hutchinson on the model's own render
};

struct FisherSelectionOptions {
  double lambda = kDefaultFisherLambda;
  ComponentWeights weights;
  bool include_semantic = true;
  DeformationScoreChoice deformation_score = DeformationScoreChoice::Auto;
  int hutchinson_probes = 4;
  std::uint64_t seed = 0;  // Hutchinson probes
};

/// Accumulated Fisher of the training views, kept per output kind.
struct TrainingFisher {
  FisherDiagonal color;
  FisherDiagonal features;

  static TrainingFisher zeros(Index n) { return {FisherDiagonal::zeros(n), FisherDiagonal::zeros(n)}; }
  void add(const FisherComponents& view);
};

/// Fisher of one view with respect to the canonical Gaussians. In dynamic mode
/// the scene is deformed to the view time and the geometry Jacobian is chained in.
FisherComponents view_fisher(const Model& model, const CameraView& view);

/// Index of the max score; ties go to the lowest id. Fills note when tied.
std::size_t argmax_lowest_id(std::span<const double> scores, std::span<const int> ids, std::string* note = nullptr);

/// (x - mean) / std across the entries; all zeros when std < 1e-12.
std::vector<double> z_normalize(std::span<const double> x);

/// Candidate ids ordered by decreasing score, ties by increasing id.
std::vector<int> ranking(std::span<const double> scores, std::span<const int> ids);
std::vector<int> ranking(const SelectionRecord& record);

SelectionRecord select_fisher(const CandidatePool& pool, const Model& model, const TrainingFisher& train,
                              const FisherSelectionOptions& opts, std::span<const Frame* const> known = {},
                              std::optional<int> timestep = std::nullopt);

/// FisherRF baseline: EIG of RGB-only Fisher against the RGB training Fisher.
/// Scores are returned in the order of pool.open(timestep).
std::vector<double> fisherrf_scores(const CandidatePool& pool, const Model& model, const FisherDiagonal& train_color,
                                    double lambda, std::optional<int> timestep = std::nullopt);

SelectionRecord select_random(const CandidatePool& pool, std::mt19937_64& rng,
                              std::optional<int> timestep = std::nullopt);
SelectionRecord select_random(const CandidatePool& pool, std::uint64_t seed,
                              std::optional<int> timestep = std::nullopt);

/// Mean over pixels and channels of the rendered feature variance
/// sum_i w_i f_i^2 - (sum_i w_i f_i)^2.
double feature_covariance_score(const GaussianSet& scene, const CameraView& view, const RenderSettings& settings = {});
SelectionRecord select_covariance(const CandidatePool& pool, const Model& model,
                                  std::optional<int> timestep = std::nullopt);

// ---------------------------------------------------------------------------
// Acquisition loop

enum class Strategy { Random, Covariance, FisherRFGeom, OursGeomSem, OursGeomDef, OursFull };
const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);
std::vector<Strategy> all_strategies();

struct Schedule {
  int initial_views = 2;          // static mode
  int views_per_round = 1;        // static mode
  int iterations_per_round = 150;
  int rounds = 10;                // static mode; dynamic mode runs one round per remaining timestep
  int final_iterations = 500;
  int pretrain_iterations = 300;  // dynamic mode, on frame 0 of every camera with the deformation held fixed

  void validate() const;
};

void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);

struct AcquisitionConfig {
  Strategy strategy = Strategy::OursFull;
  Schedule schedule;
  FisherSelectionOptions fisher;  // weights scale the components the strategy enables
  std::uint64_t seed = 0;         // initial views and the random strategy
};

/// Component weights implied by a strategy (the Fisher strategies only).
ComponentWeights strategy_weights(Strategy s);

/// The loop is a sequence of stages so that it can stop and resume from a
/// checkpoint between any two of them:
///   static:  [train + select] x rounds, final training
///   dynamic: pretrain, [train + select one camera at t] for t = 1..T-1, final training
class AcquisitionLoop {
 public:
  /// `frames` holds every pool frame and must outlive the loop. Frame ids must
  /// match candidate ids.
  AcquisitionLoop(Trainer trainer, std::span<const Frame> frames, AcquisitionConfig cfg);

  bool dynamic() const { return trainer_.config().mode == TrainMode::Dynamic; }
  bool finished() const { return stage_ >= stage_count(); }
  int stage() const { return stage_; }
  int stage_count() const;
  void advance();  // runs one stage
  void run();      // runs to completion

  const Trainer& trainer() const { return trainer_; }
  const std::vector<int>& training_ids() const { return train_ids_; }
  const std::vector<SelectionRecord>& records() const { return records_; }
  const TrainingFisher& training_fisher() const { return train_fisher_; }

  void save(Checkpoint& ckpt) const;
  static AcquisitionLoop load(const Checkpoint& ckpt, std::span<const Frame> frames);

 private:
  AcquisitionLoop(Trainer trainer, std::span<const Frame> frames, AcquisitionConfig cfg, bool fresh);
  void start();
  void acquire(int id, const FisherComponents* fisher);
  void train(int iterations, bool train_deformation);
  SelectionRecord select(int round, std::optional<int> timestep);
  const Frame& frame(int id) const;
  bool uses_fisher() const;

  Trainer trainer_;
  std::span<const Frame> frames_;
  AcquisitionConfig cfg_;
  CandidatePool pool_;
  std::vector<int> train_ids_;
  TrainingFisher train_fisher_;
  std::vector<SelectionRecord> records_;
  std::mt19937_64 rng_;
  int stage_ = 0;
  int timesteps_ = 1;
};

/// Selection log: one row per candidate per round.
std::string selection_csv(std::span<const SelectionRecord> records);

}  // namespace nbv
