// trainer.hpp
//
// Joint optimization of the Gaussians, the feature decoder and (in dynamic
// mode) the deformation network under an RGB + feature loss:
//
//   L = (1 - w_ssim) * L1(C, I) + w_ssim * (1 - SSIM(C, I)) / 2 + w_feat * L1(decode(F), F_gt)
//
// Updates use Adam with per-block learning rates. Views are visited in a seeded
// shuffled round-robin so a run is reproducible from its checkpoint.

#pragma once

#include <optional>
#include <random>
#include <span>

#include <nlohmann/json.hpp>

#include "nbvsplat/deformation.hpp"
#include "nbvsplat/frame.hpp"
#include "nbvsplat/io.hpp"
#include "nbvsplat/render.hpp"
#include "nbvsplat/semantic.hpp"

namespace nbv {

enum class TrainMode { Static, Dynamic };

struct LearningRates {
  double position = 2e-3;
  double rotation = 5e-3;
  double log_scale = 5e-3;
  double opacity = 2.5e-2;
  double color = 1e-2;
  double feature = 2e-2;
  double decoder = 5e-3;
  double deformation_grid = 5e-3;
  double deformation_mlp = 5e-4;
};

struct TrainConfig {
  LearningRates lr;
  double ssim_weight = 0.2;     // mix of D-SSIM into the RGB term
  double feature_weight = 1.0;  // weight of the feature L1 term
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Static;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Model {
  GaussianSet scene;  // canonical Gaussians
  FeatureDecoder decoder;
  std::optional<DeformationNet> deformation;
  RenderSettings settings;

  void validate() const;
  GaussianSet scene_at(double t) const;
  RenderOutput render_view(const CameraView& cam) const;  // uses cam.timestamp
  Image decoded_features(const RenderOutput& out) const { return decode(decoder, out.features); }
};

struct LossTerms {
  double total = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  double feature_l1 = 0.0;
};

struct LossResult {
  LossTerms terms;
  Image color_adjoint;    // dL/dC
  Image decoded_adjoint;  // dL/d(decoded features)
};

/// Loss of one rendering against a frame, with adjoints.
LossResult frame_loss(const Image& color, const Image& decoded, const Image& gt_rgb, const Image& gt_features,
                      const TrainConfig& cfg);

/// The same loss without adjoints.
LossTerms frame_loss_value(const Image& color, const Image& decoded, const Image& gt_rgb, const Image& gt_features,
                           const TrainConfig& cfg);

/// Loss and full parameter gradient for one frame.
struct ModelGradient {
  LossTerms terms;
  GaussianSet scene;       // canonical
  Vec<double> decoder;     // FeatureDecoder::flat() layout
  Vec<double> deformation;  // empty in static mode
};
ModelGradient model_gradient(const Model& model, const Frame& frame, const TrainConfig& cfg);

struct AdamGroup {
  Vec<double> m, v;
  long steps = 0;
  void reset(Index n) {
    m = Vec<double>::Zero(n);
    v = Vec<double>::Zero(n);
    steps = 0;
  }
  void update(Vec<double>& params, const Vec<double>& grad, const Vec<double>& lr);
};

class Trainer {
 public:
  Trainer(Model model, TrainConfig cfg);

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  long iteration() const { return iteration_; }

  /// n_iters steps, one frame per step. With train_deformation false the
  /// deformation network is held fixed.
  LossTerms train_burst(std::span<const Frame* const> views, int n_iters, bool train_deformation = true);
  LossTerms step(const Frame& frame, bool train_deformation = true);

  void save_state(Checkpoint& ckpt) const;
  static Trainer load_state(const Checkpoint& ckpt);

 private:
  const Frame& next_view(std::span<const Frame* const> views);

  Model model_;
  TrainConfig cfg_;
  AdamGroup adam_scene_, adam_decoder_, adam_deformation_;
  Vec<double> lr_scene_, lr_decoder_, lr_deformation_;
  std::mt19937_64 rng_;
  std::vector<int> order_;  // frame ids in the current epoch
  std::size_t cursor_ = 0;
  long iteration_ = 0;
};

struct EvalMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double miou = 0.0;
  double macc = 0.0;
  std::optional<double> lpips;  // never computed: there is no perceptual network here
  int views = 0;
};

/// Mean metrics over test frames. Throws ContractError if a test frame id is
/// among train_ids.
EvalMetrics evaluate(const Model& model, std::span<const Frame> test, std::span<const int> train_ids,
                     const ClassEmbedding& classes);

void save_model(Checkpoint& ckpt, const Model& model);
Model load_model(const Checkpoint& ckpt);

}  // namespace nbv
