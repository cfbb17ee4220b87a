#include "nbvsplat/synth.hpp"

#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "nbvsplat/io.hpp"
#include "nbvsplat/metrics.hpp"

namespace nbv {

using nlohmann::json;

namespace {

constexpr double kDeg = M_PI / 180.0;

Eigen::Vector3d spherical(double radius, double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * kDeg, el = elevation_deg * kDeg;
  return radius * Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

CameraView camera_at(const CameraPoolSpec& c, double azimuth_deg, double elevation_deg) {
  return CameraView::look_at(spherical(c.radius, azimuth_deg, elevation_deg), Eigen::Vector3d::Zero(),
                             Eigen::Vector3d::UnitZ(), c.image_size, c.image_size, c.fov_deg);
}

const char* motion_name(MotionKind k) {
  switch (k) {
    case MotionKind::None: return "none";
    case MotionKind::Linear: return "linear";
    case MotionKind::Sinusoidal: return "sinusoidal";
  }
  return "none";
}

MotionKind motion_kind(const std::string& s) {
  if (s == "none") return MotionKind::None;
  if (s == "linear") return MotionKind::Linear;
  if (s == "sinusoidal") return MotionKind::Sinusoidal;
  throw SpecError("unknown motion kind '" + s + "'");
}

json vec3_json(const Eigen::Vector3d& v) { return json::array({v(0), v(1), v(2)}); }
Eigen::Vector3d vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

Eigen::Vector3d Motion::offset(double t) const {
  switch (kind) {
    case MotionKind::None: return Eigen::Vector3d::Zero();
    case MotionKind::Linear: return vector * t;
    case MotionKind::Sinusoidal: return vector * std::sin(2.0 * M_PI * frequency * t);
  }
  return Eigen::Vector3d::Zero();
}

void SceneSpec::validate() const {
  if (gaussians < 1 || classes < 1 || timesteps < 1 || supervision_dim < 1 || feature_dim < 1)
    throw SpecError("scene spec counts must be at least 1");
  if (!(extent > 0.0)) throw SpecError("scene extent must be positive");
  if (!(log_scale_min <= log_scale_max) || !(opacity_min > 0.0 && opacity_max < 1.0 && opacity_min <= opacity_max))
    throw SpecError("scene spec ranges are malformed");
  if (arrangement != "shell" && arrangement != "volume") throw SpecError("arrangement must be 'shell' or 'volume'");
  if (cameras.count + cameras.cluster_count < 1 || cameras.test_count < 1)
    throw SpecError("camera pool and test set must be nonempty");
  if (cameras.layout != "ring" && cameras.layout != "hemisphere")
    throw SpecError("camera layout must be 'ring' or 'hemisphere'");
  if (cameras.image_size < 8 || cameras.image_size > 128) throw SpecError("image size must lie in [8, 128]");
  for (const Motion& m : motions)
    if (m.gaussian < 0 || m.gaussian >= gaussians)
      throw SpecError("motion refers to Gaussian " + std::to_string(m.gaussian) + " which does not exist");
}

void to_json(json& j, const SceneSpec& s) {
  json motions = json::array();
  for (const Motion& m : s.motions)
    motions.push_back({{"gaussian", m.gaussian},
                       {"kind", motion_name(m.kind)},
                       {"vector", vec3_json(m.vector)},
                       {"frequency", m.frequency}});
  const CameraPoolSpec& c = s.cameras;
  j = json{{"seed", s.seed},
           {"gaussians", s.gaussians},
           {"extent", s.extent},
           {"arrangement", s.arrangement},
           {"classes", s.classes},
           {"supervision_dim", s.supervision_dim},
           {"feature_dim", s.feature_dim},
           {"timesteps", s.timesteps},
           {"log_scale_min", s.log_scale_min},
           {"log_scale_max", s.log_scale_max},
           {"opacity_min", s.opacity_min},
           {"opacity_max", s.opacity_max},
           {"motions", motions},
           {"cameras",
            {{"layout", c.layout},
             {"count", c.count},
             {"radius", c.radius},
             {"elevation_deg", c.elevation_deg},
             {"cluster_count", c.cluster_count},
             {"cluster_azimuth_deg", c.cluster_azimuth_deg},
             {"cluster_elevation_deg", c.cluster_elevation_deg},
             {"cluster_spread_deg", c.cluster_spread_deg},
             {"test_count", c.test_count},
             {"image_size", c.image_size},
             {"fov_deg", c.fov_deg}}}};
}

void from_json(const json& j, SceneSpec& s) {
  s = SceneSpec{};
  s.seed = j.value("seed", s.seed);
  s.gaussians = j.value("gaussians", s.gaussians);
  s.extent = j.value("extent", s.extent);
  s.arrangement = j.value("arrangement", s.arrangement);
  s.classes = j.value("classes", s.classes);
  s.supervision_dim = j.value("supervision_dim", s.supervision_dim);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.timesteps = j.value("timesteps", s.timesteps);
  s.log_scale_min = j.value("log_scale_min", s.log_scale_min);
  s.log_scale_max = j.value("log_scale_max", s.log_scale_max);
  s.opacity_min = j.value("opacity_min", s.opacity_min);
  s.opacity_max = j.value("opacity_max", s.opacity_max);
  if (j.contains("motions"))
    for (const json& m : j.at("motions")) {
      Motion mo;
      mo.gaussian = m.at("gaussian");
      mo.kind = motion_kind(m.value("kind", std::string("none")));
      if (m.contains("vector")) mo.vector = vec3_from(m.at("vector"));
      mo.frequency = m.value("frequency", 1.0);
      s.motions.push_back(mo);
    }
  if (j.contains("cameras")) {
    const json& c = j.at("cameras");
    CameraPoolSpec& p = s.cameras;
    p.layout = c.value("layout", p.layout);
    p.count = c.value("count", p.count);
    p.radius = c.value("radius", p.radius);
    p.elevation_deg = c.value("elevation_deg", p.elevation_deg);
    p.cluster_count = c.value("cluster_count", p.cluster_count);
    p.cluster_azimuth_deg = c.value("cluster_azimuth_deg", p.cluster_azimuth_deg);
    p.cluster_elevation_deg = c.value("cluster_elevation_deg", p.cluster_elevation_deg);
    p.cluster_spread_deg = c.value("cluster_spread_deg", p.cluster_spread_deg);
    p.test_count = c.value("test_count", p.test_count);
    p.image_size = c.value("image_size", p.image_size);
    p.fov_deg = c.value("fov_deg", p.fov_deg);
  }
}

double SyntheticData::time_of(int timestep) const {
  return spec.timesteps > 1 ? double(timestep) / double(spec.timesteps - 1) : 0.0;
}

GaussianSet SyntheticData::scene_at(int timestep) const {
  GaussianSet s = canonical;
  const double t = time_of(timestep);
  for (const Motion& m : spec.motions) s.positions.row(m.gaussian) += m.offset(t).transpose();
  return s;
}

const Frame& SyntheticData::pool_frame(int camera, int timestep) const {
  NBV_REQUIRE(camera >= 0 && camera < int(pool_cameras.size()) && timestep >= 0 && timestep < spec.timesteps,
              ContractError, "pool frame index out of range");
  return pool[std::size_t(camera * spec.timesteps + timestep)];
}

std::vector<Frame> SyntheticData::test_frames_at(int timestep) const {
  std::vector<Frame> out;
  for (const Frame& f : test)
    if (f.timestep == timestep) out.push_back(f);
  return out;
}

SyntheticData generate(const SceneSpec& spec) {
  spec.validate();
  SyntheticData data;
  data.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int n = spec.gaussians;
  data.embedding = ClassEmbedding::random(spec.classes, spec.supervision_dim, rng());
  GaussianSet& g = data.canonical;
  g = GaussianSet::zeros(n, spec.supervision_dim);
  data.classes.resize(std::size_t(n));
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k)
      g.log_scales(i, k) = spec.log_scale_min + (spec.log_scale_max - spec.log_scale_min) * uni(rng);
    if (spec.arrangement == "volume") {
      for (int k = 0; k < 3; ++k) g.positions(i, k) = 0.8 * spec.extent * (2.0 * uni(rng) - 1.0);
      Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
      g.rotations.row(i) = q.normalized().transpose();
    } else {
      // Fibonacci sphere point, jittered, with the thin axis along the normal.
      const double z = 1.0 - 2.0 * (i + 0.5) / n;
      const double r = std::sqrt(1.0 - z * z), phi = golden * i + 0.3 * normal(rng);
      const Eigen::Vector3d normal_dir(r * std::cos(phi), r * std::sin(phi), z);
      g.positions.row(i) = (0.7 * spec.extent * normal_dir).transpose();
      const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), normal_dir);
      g.rotations.row(i) << q.w(), q.x(), q.y(), q.z();
      g.log_scales(i, 2) = std::min(g.log_scales(i, 0), g.log_scales(i, 1)) - 1.5;
    }
    const double o = spec.opacity_min + (spec.opacity_max - spec.opacity_min) * uni(rng);
    g.opacity_logits(i) = std::log(o / (1.0 - o));
    for (int k = 0; k < 3; ++k) g.colors(i, k) = uni(rng);
    const int cls = int(std::min<double>(spec.classes - 1, std::floor(uni(rng) * spec.classes)));
    data.classes[std::size_t(i)] = cls;
    g.features.row(i) = data.embedding.rows.row(cls);
  }

  // Motion must keep every Gaussian inside the extent over t in [0, 1].
  for (const Motion& m : spec.motions)
    for (int s = 0; s <= 1000; ++s) {
      const Eigen::Vector3d p = g.positions.row(m.gaussian).transpose() + m.offset(s / 1000.0);
      if (p.cwiseAbs().maxCoeff() > spec.extent)
        throw SpecError("motion of Gaussian " + std::to_string(m.gaussian) + " leaves the scene extent");
    }

  const CameraPoolSpec& c = spec.cameras;
  if (c.layout == "ring") {
    for (int k = 0; k < c.count; ++k) data.pool_cameras.push_back(camera_at(c, 360.0 * k / c.count, c.elevation_deg));
  } else {
    // Fibonacci spiral over the band [elevation_deg, 75 deg].
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    const double z_lo = std::sin(c.elevation_deg * kDeg), z_hi = std::sin(75.0 * kDeg);
    for (int k = 0; k < c.count; ++k) {
      const double z = z_lo + (z_hi - z_lo) * (k + 0.5) / c.count;
      data.pool_cameras.push_back(camera_at(c, golden * k / kDeg, std::asin(z) / kDeg));
    }
  }
  std::uniform_real_distribution<double> jitter(-c.cluster_spread_deg, c.cluster_spread_deg);
  for (int k = 0; k < c.cluster_count; ++k) {
    const double az = c.cluster_azimuth_deg + jitter(rng);
    const double el = c.cluster_elevation_deg + jitter(rng);
    data.pool_cameras.push_back(camera_at(c, az, el));
  }
  const double test_el = 0.5 * (c.elevation_deg + 55.0);
  for (int k = 0; k < c.test_count; ++k)
    data.test_cameras.push_back(camera_at(c, 360.0 * (k + 0.5) / c.test_count, test_el + (k % 2 ? 12.0 : -12.0)));

  auto make_frame = [&](int id, int cam_index, const CameraView& cam, int t) {
    Frame f;
    f.id = id;
    f.camera = cam_index;
    f.timestep = t;
    f.view = cam;
    f.view.timestamp = data.time_of(t);
    const RenderOutput out = render(data.scene_at(t), f.view);
    f.rgb = out.color;
    f.features = out.features;
    f.labels = segment(out.features, data.embedding);
    for (std::size_t px = 0; px < f.labels.data.size(); ++px)
      if (out.final_transmittance[px] > 0.5) f.labels.data[px] = kIgnoreLabel;
    return f;
  };
  for (int cam = 0; cam < int(data.pool_cameras.size()); ++cam)
    for (int t = 0; t < spec.timesteps; ++t)
      data.pool.push_back(make_frame(cam * spec.timesteps + t, cam, data.pool_cameras[std::size_t(cam)], t));
  for (int cam = 0; cam < int(data.test_cameras.size()); ++cam)
    for (int t = 0; t < spec.timesteps; ++t)
      data.test.push_back(make_frame(SyntheticData::kTestIdBase + cam * spec.timesteps + t, cam,
                                     data.test_cameras[std::size_t(cam)], t));
  return data;
}

void write_dataset(const SyntheticData& data, const std::filesystem::path& dir) {
  json scene = {{"spec", data.spec}, {"ground_truth", scene_to_json(data.canonical)}, {"classes", data.classes}};
  write_text(dir / "scene.json", scene.dump(2));
  json cams = {{"pool", json::array()}, {"test", json::array()}};
  for (const auto& c : data.pool_cameras) cams["pool"].push_back(camera_to_json(c));
  for (const auto& c : data.test_cameras) cams["test"].push_back(camera_to_json(c));
  write_text(dir / "cams.json", cams.dump(2));
  auto dump = [&](const Frame& f, const std::string& view) {
    const std::string stem = view + "_" + std::to_string(f.timestep);
    write_ppm(dir / "frames" / (stem + ".ppm"), f.rgb);
    write_feature_map(dir / "feats" / (stem + ".bin"), f.features);
    write_labels(dir / "labels" / (stem + ".pgm"), f.labels);
  };
  for (const Frame& f : data.pool) dump(f, std::to_string(f.camera));
  for (const Frame& f : data.test) dump(f, "test" + std::to_string(f.camera));
}

Model initial_model(const SyntheticData& data, const ModelInitSpec& init, bool dynamic,
                    const DeformationConfig& deformation) {
  std::mt19937_64 rng(init.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const SceneSpec& spec = data.spec;
  Model model;
  GaussianSet& s = model.scene;
  s = GaussianSet::zeros(spec.gaussians, spec.feature_dim);
  s.positions = data.canonical.positions;
  s.rotations = data.canonical.rotations;
  s.log_scales = data.canonical.log_scales;
  for (Index i = 0; i < s.size(); ++i) {
    for (int k = 0; k < 3; ++k) s.positions(i, k) += init.position_noise * spec.extent * normal(rng);
    for (int k = 0; k < 3; ++k) s.log_scales(i, k) += init.log_scale_noise * normal(rng);
    for (int k = 0; k < spec.feature_dim; ++k) s.features(i, k) = init.feature_std * normal(rng);
  }
  s.opacity_logits.setConstant(std::log(init.initial_opacity / (1.0 - init.initial_opacity)));
  s.colors.setConstant(init.initial_color);
  model.decoder = FeatureDecoder::random(spec.feature_dim, spec.supervision_dim, rng());
  if (dynamic) {
    DeformationConfig cfg = deformation;
    cfg.bounds_min = Eigen::Vector3d::Constant(-1.2 * spec.extent);
    cfg.bounds_max = Eigen::Vector3d::Constant(1.2 * spec.extent);
    model.deformation = DeformationNet::create(cfg, rng());
  }
  model.validate();
  return model;
}

namespace {

double mean_psnr(const Model& model, std::span<const Frame> test) {
  double acc = 0.0;
  for (const Frame& f : test) acc += psnr(model.render_view(f.view).color, f.rgb);
  return acc / double(test.size());
}

}  // namespace

std::vector<double> oracle_error_drop(const Trainer& trainer, std::span<const Frame* const> train,
                                      std::span<const Frame* const> candidates, std::span<const Frame> test,
                                      int iterations) {
  NBV_REQUIRE(!test.empty(), ContractError, "oracle needs test frames");
  const double before = mean_psnr(trainer.model(), test);
  std::vector<double> drops;
  for (const Frame* cand : candidates) {
    Trainer copy = trainer;
    std::vector<const Frame*> views(train.begin(), train.end());
    views.push_back(cand);
    copy.train_burst(views, iterations);
    drops.push_back(mean_psnr(copy.model(), test) - before);
  }
  return drops;
}

}  // namespace nbv
