#include "nbvsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "nbvsplat/metrics.hpp"

namespace nbv {

using nlohmann::json;

void TrainConfig::validate() const {
  const double rates[] = {lr.position, lr.rotation,         lr.log_scale,      lr.opacity, lr.color,
                          lr.feature,  lr.decoder,          lr.deformation_grid, lr.deformation_mlp};
  for (double r : rates) NBV_REQUIRE(r >= 0.0 && std::isfinite(r), ContractError, "learning rates must be >= 0");
  NBV_REQUIRE(ssim_weight >= 0.0 && ssim_weight <= 1.0, ContractError, "ssim_weight must lie in [0, 1]");
  NBV_REQUIRE(feature_weight >= 0.0, ContractError, "feature_weight must be >= 0");
  NBV_REQUIRE(divergence_threshold > 0.0, ContractError, "divergence threshold must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr",
            {{"position", c.lr.position},
             {"rotation", c.lr.rotation},
             {"log_scale", c.lr.log_scale},
             {"opacity", c.lr.opacity},
             {"color", c.lr.color},
             {"feature", c.lr.feature},
             {"decoder", c.lr.decoder},
             {"deformation_grid", c.lr.deformation_grid},
             {"deformation_mlp", c.lr.deformation_mlp}}},
           {"ssim_weight", c.ssim_weight},
           {"feature_weight", c.feature_weight},
           {"divergence_threshold", c.divergence_threshold},
           {"seed", c.seed},
           {"mode", c.mode == TrainMode::Static ? "static" : "dynamic"}};
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("lr")) {
    const json& l = j.at("lr");
    c.lr.position = l.value("position", c.lr.position);
    c.lr.rotation = l.value("rotation", c.lr.rotation);
    c.lr.log_scale = l.value("log_scale", c.lr.log_scale);
    c.lr.opacity = l.value("opacity", c.lr.opacity);
    c.lr.color = l.value("color", c.lr.color);
    c.lr.feature = l.value("feature", c.lr.feature);
    c.lr.decoder = l.value("decoder", c.lr.decoder);
    c.lr.deformation_grid = l.value("deformation_grid", c.lr.deformation_grid);
    c.lr.deformation_mlp = l.value("deformation_mlp", c.lr.deformation_mlp);
  }
  c.ssim_weight = j.value("ssim_weight", c.ssim_weight);
  c.feature_weight = j.value("feature_weight", c.feature_weight);
  c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
  c.seed = j.value("seed", c.seed);
  const std::string mode = j.value("mode", std::string("static"));
  NBV_REQUIRE(mode == "static" || mode == "dynamic", ContractError, "mode must be 'static' or 'dynamic'");
  c.mode = mode == "static" ? TrainMode::Static : TrainMode::Dynamic;
  c.validate();
}

// ---------------------------------------------------------------------------

void Model::validate() const {
  scene.validate();
  decoder.validate();
  NBV_REQUIRE(decoder.input_dim() == scene.feature_dim(), ContractError,
              "decoder input dim must equal the Gaussian feature dim");
  if (deformation) deformation->validate();
}

GaussianSet Model::scene_at(double t) const { return deformation ? deform(scene, *deformation, t) : scene; }

RenderOutput Model::render_view(const CameraView& cam) const { return render(scene_at(cam.timestamp), cam, settings); }

LossResult frame_loss(const Image& color, const Image& decoded, const Image& gt_rgb, const Image& gt_features,
                      const TrainConfig& cfg) {
  const double w = cfg.ssim_weight;
  const ImageLoss l1 = mean_abs_error(color, gt_rgb, true);
  LossResult r;
  r.terms.l1 = l1.value;
  r.color_adjoint = l1.gradient;
  for (double& v : r.color_adjoint.data) v *= (1.0 - w);
  if (w > 0.0) {
    const ImageLoss s = ssim(color, gt_rgb, true);
    r.terms.ssim = s.value;
    for (std::size_t i = 0; i < s.gradient.data.size(); ++i) r.color_adjoint.data[i] -= 0.5 * w * s.gradient.data[i];
  } else {
    r.terms.ssim = ssim(color, gt_rgb).value;
  }
  r.terms.total = (1.0 - w) * r.terms.l1 + w * 0.5 * (1.0 - r.terms.ssim);
  if (!gt_features.empty()) {
    const ImageLoss f = mean_abs_error(decoded, gt_features, true);
    r.terms.feature_l1 = f.value;
    r.terms.total += cfg.feature_weight * f.value;
    r.decoded_adjoint = f.gradient;
    for (double& v : r.decoded_adjoint.data) v *= cfg.feature_weight;
  } else {
    r.decoded_adjoint = Image(decoded.height, decoded.width, decoded.channels);
  }
  return r;
}

LossTerms frame_loss_value(const Image& color, const Image& decoded, const Image& gt_rgb, const Image& gt_features,
                           const TrainConfig& cfg) {
  const double w = cfg.ssim_weight;
  LossTerms t;
  t.l1 = mean_abs_error(color, gt_rgb).value;
  t.ssim = ssim(color, gt_rgb).value;
  t.total = (1.0 - w) * t.l1 + w * 0.5 * (1.0 - t.ssim);
  if (!gt_features.empty()) {
    t.feature_l1 = mean_abs_error(decoded, gt_features).value;
    t.total += cfg.feature_weight * t.feature_l1;
  }
  return t;
}

ModelGradient model_gradient(const Model& model, const Frame& frame, const TrainConfig& cfg) {
  const CameraView& cam = frame.view;
  const double t = cam.timestamp;
  const GaussianSet scene_t = model.scene_at(t);
  const RenderOutput out = render(scene_t, cam, model.settings);
  const Image decoded = model.decoded_features(out);
  const LossResult loss = frame_loss(out.color, decoded, frame.rgb, frame.features, cfg);

  const DecoderGradient dg = decode_backward(model.decoder, out.features, loss.decoded_adjoint);
  const GaussianSet g_rendered = render_backward(scene_t, cam, loss.color_adjoint, dg.features, model.settings);

  ModelGradient g;
  g.terms = loss.terms;
  g.decoder.resize(model.decoder.parameter_count());
  std::copy_n(dg.weights.data(), dg.weights.size(), g.decoder.data());
  std::copy_n(dg.bias.data(), dg.bias.size(), g.decoder.data() + dg.weights.size());
  if (model.deformation) {
    const DeformationNet& net = *model.deformation;
    DeformGradient<double> d = deform_backward<double>(model.scene, net, net.params.data(), t, g_rendered);
    g.scene = std::move(d.scene);
    g.deformation = std::move(d.params);
  } else {
    g.scene = g_rendered;
  }
  return g;
}

void AdamGroup::update(Vec<double>& params, const Vec<double>& grad, const Vec<double>& lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  NBV_REQUIRE(params.size() == grad.size() && m.size() == grad.size(), ContractError, "optimizer state size mismatch");
  ++steps;
  const double c1 = 1.0 - std::pow(b1, double(steps));
  const double c2 = 1.0 - std::pow(b2, double(steps));
  for (Index i = 0; i < params.size(); ++i) {
    m(i) = b1 * m(i) + (1.0 - b1) * grad(i);
    v(i) = b2 * v(i) + (1.0 - b2) * grad(i) * grad(i);
    params(i) -= lr(i) * (m(i) / c1) / (std::sqrt(v(i) / c2) + eps);
  }
}

// ---------------------------------------------------------------------------

namespace {

Vec<double> scene_learning_rates(const GaussianSet& scene, const LearningRates& lr) {
  const ParamLayout layout(scene);
  Vec<double> out(layout.total());
  const std::pair<Block, double> blocks[] = {{Block::Position, lr.position}, {Block::Rotation, lr.rotation},
                                             {Block::LogScale, lr.log_scale}, {Block::Opacity, lr.opacity},
                                             {Block::Color, lr.color},        {Block::Feature, lr.feature}};
  for (const auto& [b, rate] : blocks)
    out.segment(layout.offset(b), layout.width(b) * layout.gaussians).setConstant(rate);
  return out;
}

Vec<double> deformation_learning_rates(const DeformationNet& net, const LearningRates& lr) {
  Vec<double> out = Vec<double>::Constant(net.parameter_count(), lr.deformation_mlp);
  out.head(net.grid_parameter_count()).setConstant(lr.deformation_grid);
  return out;
}

}  // namespace

Trainer::Trainer(Model model, TrainConfig cfg) : model_(std::move(model)), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  model_.validate();
  NBV_REQUIRE((cfg_.mode == TrainMode::Dynamic) == model_.deformation.has_value(), ContractError,
              "dynamic mode needs a deformation network and static mode must not have one");
  lr_scene_ = scene_learning_rates(model_.scene, cfg_.lr);
  lr_decoder_ = Vec<double>::Constant(model_.decoder.parameter_count(), cfg_.lr.decoder);
  adam_scene_.reset(lr_scene_.size());
  adam_decoder_.reset(lr_decoder_.size());
  if (model_.deformation) {
    lr_deformation_ = deformation_learning_rates(*model_.deformation, cfg_.lr);
    adam_deformation_.reset(lr_deformation_.size());
  }
}

const Frame& Trainer::next_view(std::span<const Frame* const> views) {
  std::vector<int> ids;
  ids.reserve(views.size());
  for (const Frame* f : views) ids.push_back(f->id);
  std::sort(ids.begin(), ids.end());
  NBV_REQUIRE(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ContractError, "training views repeat an id");
  std::vector<int> current = order_;
  std::sort(current.begin(), current.end());
  if (current != ids || cursor_ >= order_.size()) {
    order_ = ids;
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  const int id = order_[cursor_++];
  for (const Frame* f : views)
    if (f->id == id) return *f;
  throw ContractError("training view lookup failed");
}

LossTerms Trainer::step(const Frame& frame, bool train_deformation) {
  const ModelGradient g = model_gradient(model_, frame, cfg_);
  if (!std::isfinite(g.terms.total) || g.terms.total > cfg_.divergence_threshold)
    throw DivergenceError("training diverged at iteration " + std::to_string(iteration_) + " on frame " +
                          std::to_string(frame.id) + ": loss " + std::to_string(g.terms.total));

  Vec<double> flat = flatten(model_.scene);
  adam_scene_.update(flat, flatten(g.scene), lr_scene_);
  model_.scene = unflatten(flat, ParamLayout(model_.scene));
  model_.scene.colors = model_.scene.colors.cwiseMax(0.0).cwiseMin(1.0);

  Vec<double> dec = model_.decoder.flat();
  adam_decoder_.update(dec, g.decoder, lr_decoder_);
  model_.decoder.set_flat(dec);

  if (model_.deformation && train_deformation) adam_deformation_.update(model_.deformation->params, g.deformation, lr_deformation_);
  ++iteration_;
  return g.terms;
}

LossTerms Trainer::train_burst(std::span<const Frame* const> views, int n_iters, bool train_deformation) {
  NBV_REQUIRE(!views.empty(), ContractError, "training needs at least one view");
  NBV_REQUIRE(n_iters >= 0, ContractError, "iteration count must be nonnegative");
  LossTerms last;
  for (int i = 0; i < n_iters; ++i) last = step(next_view(views), train_deformation);
  return last;
}

void save_model(Checkpoint& ckpt, const Model& model) {
  ckpt.put("scene.positions", model.scene.positions);
  ckpt.put("scene.rotations", model.scene.rotations);
  ckpt.put("scene.log_scales", model.scene.log_scales);
  ckpt.put("scene.opacity_logits", model.scene.opacity_logits);
  ckpt.put("scene.colors", model.scene.colors);
  ckpt.put("scene.features", model.scene.features);
  ckpt.put("decoder.weights", model.decoder.weights);
  ckpt.put("decoder.bias", model.decoder.bias);
  json m = {{"near_plane", model.settings.near_plane},
            {"footprint_sigma", model.settings.footprint_sigma},
            {"alpha_max", model.settings.alpha_max},
            {"cov_regularization", model.settings.cov_regularization}};
  ckpt.meta["render_settings"] = m;
  if (model.deformation) {
    const DeformationConfig& c = model.deformation->config;
    ckpt.meta["deformation"] = {{"grid_resolution", c.grid_resolution},
                                {"grid_channels", c.grid_channels},
                                {"fusion_width", c.fusion_width},
                                {"fused_dim", c.fused_dim},
                                {"head_width", c.head_width},
                                {"bounds_min", {c.bounds_min(0), c.bounds_min(1), c.bounds_min(2)}},
                                {"bounds_max", {c.bounds_max(0), c.bounds_max(1), c.bounds_max(2)}},
                                {"grid_init_scale", c.grid_init_scale}};
    ckpt.put("deformation.params", model.deformation->params);
  }
}

Model load_model(const Checkpoint& ckpt) {
  Model model;
  model.scene.positions = ckpt.mat("scene.positions");
  model.scene.rotations = ckpt.mat("scene.rotations");
  model.scene.log_scales = ckpt.mat("scene.log_scales");
  model.scene.opacity_logits = ckpt.vec("scene.opacity_logits");
  model.scene.colors = ckpt.mat("scene.colors");
  model.scene.features = ckpt.mat("scene.features");
  model.decoder.weights = ckpt.mat("decoder.weights");
  model.decoder.bias = ckpt.vec("decoder.bias");
  const json& rs = ckpt.meta.at("render_settings");
  model.settings.near_plane = rs.at("near_plane");
  model.settings.footprint_sigma = rs.at("footprint_sigma");
  model.settings.alpha_max = rs.at("alpha_max");
  model.settings.cov_regularization = rs.at("cov_regularization");
  if (ckpt.meta.contains("deformation")) {
    const json& d = ckpt.meta.at("deformation");
    DeformationConfig c;
    c.grid_resolution = d.at("grid_resolution");
    c.grid_channels = d.at("grid_channels");
    c.fusion_width = d.at("fusion_width");
    c.fused_dim = d.at("fused_dim");
    c.head_width = d.at("head_width");
    for (int k = 0; k < 3; ++k) {
      c.bounds_min(k) = d.at("bounds_min").at(std::size_t(k));
      c.bounds_max(k) = d.at("bounds_max").at(std::size_t(k));
    }
    c.grid_init_scale = d.at("grid_init_scale");
    DeformationNet net(c);
    net.params = ckpt.vec("deformation.params");
    model.deformation = std::move(net);
  }
  model.validate();
  return model;
}

void Trainer::save_state(Checkpoint& ckpt) const {
  save_model(ckpt, model_);
  json& tr = ckpt.meta["trainer"];
  tr["config"] = cfg_;
  tr["iteration"] = iteration_;
  tr["rng"] = rng_to_string(rng_);
  tr["order"] = order_;
  tr["cursor"] = cursor_;
  tr["adam_steps"] = {adam_scene_.steps, adam_decoder_.steps, adam_deformation_.steps};
  ckpt.put("adam.scene.m", adam_scene_.m);
  ckpt.put("adam.scene.v", adam_scene_.v);
  ckpt.put("adam.decoder.m", adam_decoder_.m);
  ckpt.put("adam.decoder.v", adam_decoder_.v);
  if (model_.deformation) {
    ckpt.put("adam.deformation.m", adam_deformation_.m);
    ckpt.put("adam.deformation.v", adam_deformation_.v);
  }
}

Trainer Trainer::load_state(const Checkpoint& ckpt) {
  const json& tr = ckpt.meta.at("trainer");
  Trainer t(load_model(ckpt), tr.at("config").get<TrainConfig>());
  t.iteration_ = tr.at("iteration");
  t.rng_ = rng_from_string(tr.at("rng").get<std::string>());
  t.order_ = tr.at("order").get<std::vector<int>>();
  t.cursor_ = tr.at("cursor");
  const auto steps = tr.at("adam_steps").get<std::vector<long>>();
  t.adam_scene_.m = ckpt.vec("adam.scene.m");
  t.adam_scene_.v = ckpt.vec("adam.scene.v");
  t.adam_scene_.steps = steps.at(0);
  t.adam_decoder_.m = ckpt.vec("adam.decoder.m");
  t.adam_decoder_.v = ckpt.vec("adam.decoder.v");
  t.adam_decoder_.steps = steps.at(1);
  if (t.model_.deformation) {
    t.adam_deformation_.m = ckpt.vec("adam.deformation.m");
    t.adam_deformation_.v = ckpt.vec("adam.deformation.v");
    t.adam_deformation_.steps = steps.at(2);
  }
  return t;
}

EvalMetrics evaluate(const Model& model, std::span<const Frame> test, std::span<const int> train_ids,
                     const ClassEmbedding& classes) {
  NBV_REQUIRE(!test.empty(), ContractError, "evaluation needs at least one test view");
  const std::set<int> train(train_ids.begin(), train_ids.end());
  EvalMetrics m;
  for (const Frame& f : test) {
    NBV_REQUIRE(!train.count(f.id), ContractError,
                "test frame " + std::to_string(f.id) + " is also a training frame");
    const RenderOutput out = model.render_view(f.view);
    m.psnr += psnr(out.color, f.rgb);
    m.ssim += ssim(out.color, f.rgb).value;
    if (!f.labels.empty()) {
      const LabelMap pred = segment(model.decoded_features(out), classes);
      const SegmentationMetrics s = miou_macc(pred, f.labels, int(classes.classes()));
      m.miou += s.miou;
      m.macc += s.macc;
    }
  }
  m.views = int(test.size());
  m.psnr /= m.views;
  m.ssim /= m.views;
  m.miou /= m.views;
  m.macc /= m.views;
  return m;
}

}  // namespace nbv
