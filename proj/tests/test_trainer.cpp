#include <filesystem>
#include <random>

#include "doctest.h"
#include "nbvsplat/metrics.hpp"
#include "nbvsplat/synth.hpp"
#include "nbvsplat/trainer.hpp"
#include "test_util.hpp"

using namespace nbv;

namespace {

SyntheticData small_data(std::uint64_t seed, int timesteps = 1) {
  SceneSpec spec;
  spec.seed = seed;
  spec.gaussians = 6;
  spec.timesteps = timesteps;
  spec.cameras.count = 4;
  spec.cameras.test_count = 2;
  spec.cameras.image_size = 16;
  if (timesteps > 1) spec.motions.push_back({0, MotionKind::Linear, Eigen::Vector3d(0.0, 0.0, 0.2), 1.0});
  return generate(spec);
}

std::vector<const Frame*> pointers(const std::vector<Frame>& frames) {
  std::vector<const Frame*> out;
  for (const Frame& f : frames) out.push_back(&f);
  return out;
}

Vec<double> model_params(const Model& m) {
  Vec<double> s = flatten(m.scene), d = m.decoder.flat();
  Vec<double> def = m.deformation ? m.deformation->params : Vec<double>();
  Vec<double> out(s.size() + d.size() + def.size());
  out << s, d, def;
  return out;
}

void set_model_params(Model& m, const Vec<double>& p) {
  const ParamLayout layout(m.scene);
  m.scene = unflatten(Vec<double>(p.head(layout.total())), layout);
  m.decoder.set_flat(p.segment(layout.total(), m.decoder.parameter_count()));
  if (m.deformation) m.deformation->params = p.tail(m.deformation->parameter_count());
}

LearningRates zero_rates() {
  LearningRates lr;
  lr.position = lr.rotation = lr.log_scale = lr.opacity = lr.color = lr.feature = lr.decoder = 0.0;
  lr.deformation_grid = lr.deformation_mlp = 0.0;
  return lr;
}

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
  if (a.meta != b.meta || a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, t] : a.tensors) {
    if (!b.has(name)) return false;
    const Tensor& u = b.tensors.at(name);
    if (u.shape != t.shape || u.data != t.data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("loss is zero when the rendering equals the ground truth") {
  std::mt19937_64 rng(1);
  const Image rgb = testing::random_image(rng, 12, 12, 3, 0.0, 1.0);
  const Image feat = testing::random_image(rng, 12, 12, 5);
  const LossResult r = frame_loss(rgb, feat, rgb, feat, TrainConfig{});
  CHECK(r.terms.l1 == 0.0);
  CHECK(r.terms.feature_l1 == 0.0);
  CHECK(r.terms.ssim == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(r.terms.total) < 1e-14);
}

TEST_CASE("feature weight zero makes the loss ignore features") {
  std::mt19937_64 rng(2);
  const Image rgb = testing::random_image(rng, 10, 10, 3, 0.0, 1.0);
  const Image gt = testing::random_image(rng, 10, 10, 3, 0.0, 1.0);
  const Image feat = testing::random_image(rng, 10, 10, 4);
  const Image gt_feat = testing::random_image(rng, 10, 10, 4);
  TrainConfig cfg;
  cfg.feature_weight = 0.0;
  const LossResult a = frame_loss(rgb, feat, gt, gt_feat, cfg);
  const LossResult b = frame_loss(rgb, testing::random_image(rng, 10, 10, 4), gt, gt_feat, cfg);
  CHECK(a.terms.total == b.terms.total);
  for (double v : a.decoded_adjoint.data) CHECK(v == 0.0);
}

TEST_CASE("value-only loss agrees with the loss that carries adjoints") {
  std::mt19937_64 rng(9);
  const Image rgb = testing::random_image(rng, 10, 10, 3, 0.0, 1.0);
  const Image gt = testing::random_image(rng, 10, 10, 3, 0.0, 1.0);
  const Image feat = testing::random_image(rng, 10, 10, 4);
  const Image gt_feat = testing::random_image(rng, 10, 10, 4);
  for (double w : {0.0, 0.2}) {
    TrainConfig cfg;
    cfg.ssim_weight = w;
    const LossTerms a = frame_loss(rgb, feat, gt, gt_feat, cfg).terms;
    const LossTerms b = frame_loss_value(rgb, feat, gt, gt_feat, cfg);
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-14));
    CHECK(a.l1 == b.l1);
    CHECK(a.ssim == doctest::Approx(b.ssim).epsilon(1e-14));
    CHECK(a.feature_l1 == b.feature_l1);
  }
}

TEST_CASE("L1 term on a 2x2 image matches the hand-computed mean") {
  Image color(2, 2, 3), gt(2, 2, 3);
  // residuals per pixel (same in every channel): 0.1, -0.2, 0.3, -0.4
  const double res[4] = {0.1, -0.2, 0.3, -0.4};
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c) {
      gt.data[std::size_t(3 * p + c)] = 0.5;
      color.data[std::size_t(3 * p + c)] = 0.5 + res[p];
    }
  TrainConfig cfg;
  cfg.ssim_weight = 0.0;
  const LossResult r = frame_loss(color, Image(2, 2, 2), gt, Image{}, cfg);
  CHECK(r.terms.l1 == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(r.terms.total == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("loss shapes must agree") {
  CHECK_THROWS_AS(frame_loss(Image(4, 4, 3), Image(4, 4, 2), Image(4, 5, 3), Image(4, 4, 2), TrainConfig{}),
                  ContractError);
  CHECK_THROWS_AS(frame_loss(Image(4, 4, 3), Image(4, 4, 2), Image(4, 4, 3), Image(4, 4, 3), TrainConfig{}),
                  ContractError);
}

TEST_CASE("train config validation and JSON round trip") {
  TrainConfig cfg;
  cfg.lr.color = 0.123;
  cfg.ssim_weight = 0.4;
  cfg.seed = 99;
  cfg.mode = TrainMode::Dynamic;
  const TrainConfig back = nlohmann::json(cfg).get<TrainConfig>();
  CHECK(back.lr.color == 0.123);
  CHECK(back.ssim_weight == 0.4);
  CHECK(back.seed == 99);
  CHECK(back.mode == TrainMode::Dynamic);
  cfg.ssim_weight = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.ssim_weight = 0.2;
  cfg.lr.position = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("zero learning rates leave every parameter unchanged") {
  const SyntheticData data = small_data(3, 3);
  for (bool dynamic : {false, true}) {
    TrainConfig cfg;
    cfg.lr = zero_rates();
    cfg.mode = dynamic ? TrainMode::Dynamic : TrainMode::Static;
    Trainer tr(initial_model(data, {}, dynamic), cfg);
    const Vec<double> before = model_params(tr.model());
    const auto views = pointers(data.pool);
    tr.train_burst(views, 8);
    CHECK(model_params(tr.model()) == before);
    CHECK(tr.iteration() == 8);
  }
}

TEST_CASE("color-only learning on one view decreases the loss monotonically") {
  GaussianSet scene = GaussianSet::zeros(1, 4);
  scene.rotations.row(0) << 1.0, 0.0, 0.0, 0.0;
  scene.log_scales.setConstant(-1.0);
  scene.opacity_logits(0) = 1.0;
  scene.colors.row(0) << 0.5, 0.5, 0.5;
  const CameraView cam = testing::front_camera(12);
  Frame frame;
  frame.view = cam;
  frame.rgb = Image(12, 12, 3);
  for (int p = 0; p < frame.rgb.pixels(); ++p) {
    frame.rgb.data[std::size_t(3 * p)] = 0.9;
    frame.rgb.data[std::size_t(3 * p + 1)] = 0.8;
    frame.rgb.data[std::size_t(3 * p + 2)] = 0.1;
  }
  Model model;
  model.scene = scene;
  model.decoder = FeatureDecoder::identity(4);
  TrainConfig cfg;
  cfg.lr = zero_rates();
  cfg.lr.color = 1e-3;
  Trainer tr(model, cfg);
  double prev = INFINITY;
  int increases = 0;
  for (int i = 0; i < 100; ++i) {
    const double loss = tr.step(frame).total;
    if (loss >= prev) ++increases;
    prev = loss;
  }
  CHECK(increases == 0);
  CHECK(tr.model().scene.positions == scene.positions);
}

TEST_CASE("training is bit-identical under a fixed seed") {
  const SyntheticData data = small_data(4);
  const auto views = pointers(data.pool);
  TrainConfig cfg;
  cfg.seed = 17;
  Checkpoint a, b;
  {
    Trainer tr(initial_model(data, {}, false), cfg);
    tr.train_burst(views, 25);
    tr.save_state(a);
  }
  {
    Trainer tr(initial_model(data, {}, false), cfg);
    tr.train_burst(views, 25);
    tr.save_state(b);
  }
  CHECK(same_checkpoint(a, b));
}

TEST_CASE("checkpoint round trip mid-training is bit-transparent") {
  const SyntheticData data = small_data(5, 3);
  const auto views = pointers(data.pool);
  const auto path = std::filesystem::temp_directory_path() / "nbvsplat_trainer_roundtrip.ckpt";
  for (bool dynamic : {false, true}) {
    CAPTURE(dynamic);
    TrainConfig cfg;
    cfg.seed = 23;
    cfg.mode = dynamic ? TrainMode::Dynamic : TrainMode::Static;
    Trainer straight(initial_model(data, {}, dynamic), cfg);
    straight.train_burst(views, 20);

    Trainer first(initial_model(data, {}, dynamic), cfg);
    first.train_burst(views, 10);
    Checkpoint mid;
    first.save_state(mid);
    save_checkpoint(path, mid);
    Trainer resumed = Trainer::load_state(load_checkpoint(path));
    resumed.train_burst(views, 10);

    Checkpoint x, y;
    straight.save_state(x);
    resumed.save_state(y);
    CHECK(same_checkpoint(x, y));
  }
  std::filesystem::remove(path);
}

TEST_CASE("model gradient matches central differences on sampled parameters") {
  for (bool dynamic : {false, true}) {
    CAPTURE(dynamic);
    const SyntheticData data = small_data(6, 3);
    Model model = initial_model(data, {}, dynamic);
    if (dynamic) {
      DeformationConfig small;
      small.grid_resolution = 4;
      small.grid_channels = 2;
      small.fusion_width = 5;
      small.fused_dim = 4;
      small.head_width = 4;
      small.bounds_min = Eigen::Vector3d::Constant(-1.2);
      small.bounds_max = Eigen::Vector3d::Constant(1.2);
      small.grid_init_scale = 0.5;
      model.deformation = testing::active_net(small, 7, 0.3);
    }
    const Frame& frame = data.pool_frame(1, dynamic ? 1 : 0);
    const TrainConfig cfg;
    const ModelGradient g = model_gradient(model, frame, cfg);
    Vec<double> analytic(model_params(model).size());
    {
      const Vec<double> s = flatten(g.scene);
      analytic << s, g.decoder, g.deformation;
    }
    const Vec<double> x0 = model_params(model);
    auto loss = [&](const Vec<double>& p) {
      Model m = model;
      set_model_params(m, p);
      const RenderOutput out = m.render_view(frame.view);
      return frame_loss(out.color, m.decoded_features(out), frame.rgb, frame.features, cfg).terms.total;
    };
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<Index> pick(0, x0.size() - 1);
    Vec<double> a(50), n(50);
    for (int k = 0; k < 50; ++k) {
      const Index i = pick(rng);
      a(k) = analytic(i);
      n(k) = testing::central_difference(loss, x0, i, 1e-6);
    }
    const auto report = testing::compare_relative(a, n, 1e-6);
    CAPTURE(report.worst);
    CAPTURE(report.analytic);
    CAPTURE(report.numeric);
    CHECK(report.max_rel < 1e-3);
  }
}

TEST_CASE("divergence guard aborts with a diagnostic") {
  const SyntheticData data = small_data(9);
  Frame bad = data.pool.front();
  for (double& v : bad.rgb.data) v = 1e8;
  Trainer tr(initial_model(data, {}, false), TrainConfig{});
  CHECK_THROWS_AS(tr.step(bad), DivergenceError);
  for (double& v : bad.rgb.data) v = NAN;
  CHECK_THROWS_AS(tr.step(bad), DivergenceError);
}

TEST_CASE("trainer mode must match the model") {
  const SyntheticData data = small_data(10, 2);
  TrainConfig cfg;
  cfg.mode = TrainMode::Dynamic;
  CHECK_THROWS_AS(Trainer(initial_model(data, {}, false), cfg), ContractError);
  cfg.mode = TrainMode::Static;
  CHECK_THROWS_AS(Trainer(initial_model(data, {}, true), cfg), ContractError);
}

TEST_CASE("zero-initialized deformation renders the static model exactly at every time") {
  const SyntheticData data = small_data(11, 4);
  const Model dynamic = initial_model(data, {}, true);
  Model still = dynamic;
  still.deformation.reset();
  for (const Frame& f : data.test) {
    const RenderOutput a = dynamic.render_view(f.view), b = still.render_view(f.view);
    CHECK(a.color.data == b.color.data);
    CHECK(a.features.data == b.features.data);
  }
}

TEST_CASE("evaluate: ground-truth model scores perfectly and overlap is rejected") {
  const SyntheticData data = small_data(12);
  Model gt;
  gt.scene = data.canonical;
  gt.decoder = FeatureDecoder::identity(data.spec.supervision_dim);
  const std::vector<int> train{0, 1};
  const EvalMetrics m = evaluate(gt, data.test, train, data.embedding);
  CHECK(m.psnr == kPsnrCap);
  CHECK(m.ssim == doctest::Approx(1.0));
  CHECK(m.miou == 1.0);
  CHECK(m.macc == 1.0);
  CHECK_FALSE(m.lpips.has_value());
  CHECK(m.views == int(data.test.size()));
  const std::vector<int> overlap{data.test.front().id};
  CHECK_THROWS_AS(evaluate(gt, data.test, overlap, data.embedding), ContractError);
}

TEST_CASE("model checkpoint round trip through a file") {
  const SyntheticData data = small_data(13, 2);
  const Model m = initial_model(data, {}, true);
  Checkpoint c;
  save_model(c, m);
  const auto path = std::filesystem::temp_directory_path() / "nbvsplat_model.ckpt";
  save_checkpoint(path, c);
  const Model back = load_model(load_checkpoint(path));
  std::filesystem::remove(path);
  CHECK(model_params(back) == model_params(m));
  CHECK(back.deformation->config.grid_resolution == m.deformation->config.grid_resolution);
  CHECK(back.settings.alpha_max == m.settings.alpha_max);
}
