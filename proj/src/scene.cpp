#include "nbvsplat/scene.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

namespace nbv {

using nlohmann::json;

const char* block_name(Block b) {
  switch (b) {
    case Block::Position: return "position";
    case Block::Rotation: return "rotation";
    case Block::LogScale: return "log_scale";
    case Block::Opacity: return "opacity_logit";
    case Block::Color: return "color";
    case Block::Feature: return "feature";
  }
  return "?";
}

void CameraView::validate() const {
  NBV_REQUIRE(width >= kMinSize && height >= kMinSize, ContractError, "camera image must be at least 8x8");
  NBV_REQUIRE(width <= kMaxSize && height <= kMaxSize, ContractError, "camera image capped at 128x128");
  const double orth = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  NBV_REQUIRE(orth < 1e-9 && rotation.determinant() > 0.0, ContractError,
              "camera rotation must be orthonormal with determinant +1");
  NBV_REQUIRE(fx > 0.0 && fy > 0.0, ContractError, "focal lengths must be positive");
  NBV_REQUIRE(timestamp >= 0.0 && timestamp <= 1.0, ContractError, "timestamp must lie in [0,1]");
}

CameraView CameraView::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                               const Eigen::Vector3d& up, int width, int height, double fov_y_degrees,
                               double timestamp) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.unitOrthogonal();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);

  CameraView cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.width = width;
  cam.height = height;
  const double focal = 0.5 * height / std::tan(0.5 * fov_y_degrees * M_PI / 180.0);
  cam.fx = focal;
  cam.fy = focal;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.timestamp = timestamp;
  return cam;
}

CameraView CameraView::rolled(double angle) const {
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  CameraView out = *this;
  out.rotation = rz * rotation;
  out.translation = rz * translation;
  return out;
}

CameraView CameraView::scaled_focal(double factor) const {
  CameraView out = *this;
  out.fx *= factor;
  out.fy *= factor;
  return out;
}

namespace {

template <typename Row>
json row_to_json(const Row& row) {
  json arr = json::array();
  for (Index i = 0; i < row.size(); ++i) arr.push_back(row(i));
  return arr;
}

template <typename Row>
void row_from_json(const json& arr, Row&& row, const char* field) {
  NBV_REQUIRE(arr.is_array() && Index(arr.size()) == row.size(), SpecError,
              std::string("scene field '") + field + "' has wrong length");
  for (Index i = 0; i < row.size(); ++i) row(i) = arr[std::size_t(i)].get<double>();
}

}  // namespace

json scene_to_json(const GaussianSet& scene) {
  scene.validate();
  json gaussians = json::array();
  for (Index i = 0; i < scene.size(); ++i) {
    gaussians.push_back({{"pos", row_to_json(scene.positions.row(i))},
                         {"quat", row_to_json(scene.rotations.row(i))},
                         {"log_scale", row_to_json(scene.log_scales.row(i))},
                         {"opacity_logit", scene.opacity_logits(i)},
                         {"color", row_to_json(scene.colors.row(i))},
                         {"feature", row_to_json(scene.features.row(i))}});
  }
  return {{"feature_dim", scene.feature_dim()}, {"gaussians", gaussians}};
}

GaussianSet scene_from_json(const json& doc) {
  const json& gaussians = doc.at("gaussians");
  NBV_REQUIRE(gaussians.is_array(), SpecError, "scene 'gaussians' must be an array");
  Index feature_dim = doc.value("feature_dim", Index(-1));
  if (feature_dim < 0)
    feature_dim = gaussians.empty() ? kDefaultFeatureDim : Index(gaussians[0].at("feature").size());
  auto scene = GaussianSet::zeros(Index(gaussians.size()), feature_dim);
  for (Index i = 0; i < scene.size(); ++i) {
    const json& g = gaussians[std::size_t(i)];
    row_from_json(g.at("pos"), scene.positions.row(i), "pos");
    row_from_json(g.at("quat"), scene.rotations.row(i), "quat");
    row_from_json(g.at("log_scale"), scene.log_scales.row(i), "log_scale");
    scene.opacity_logits(i) = g.at("opacity_logit").get<double>();
    row_from_json(g.at("color"), scene.colors.row(i), "color");
    row_from_json(g.at("feature"), scene.features.row(i), "feature");
  }
  return scene;
}

void save_scene(const GaussianSet& scene, const std::string& path) {
  std::ofstream out(path);
  NBV_REQUIRE(out.good(), Error, "cannot open " + path + " for writing");
  out << scene_to_json(scene).dump(1) << '\n';
}

GaussianSet load_scene(const std::string& path) {
  std::ifstream in(path);
  NBV_REQUIRE(in.good(), Error, "cannot open " + path);
  return scene_from_json(json::parse(in));
}

json camera_to_json(const CameraView& cam) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(row_to_json(cam.rotation.row(r)));
  return {{"rotation", rot},
          {"translation", row_to_json(cam.translation)},
          {"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
          {"width", cam.width}, {"height", cam.height}, {"timestamp", cam.timestamp}};
}

CameraView camera_from_json(const json& doc) {
  CameraView cam;
  for (int r = 0; r < 3; ++r) row_from_json(doc.at("rotation").at(std::size_t(r)), cam.rotation.row(r), "rotation");
  row_from_json(doc.at("translation"), cam.translation, "translation");
  cam.fx = doc.at("fx").get<double>();
  cam.fy = doc.at("fy").get<double>();
  cam.cx = doc.at("cx").get<double>();
  cam.cy = doc.at("cy").get<double>();
  cam.width = doc.at("width").get<int>();
  cam.height = doc.at("height").get<int>();
  cam.timestamp = doc.value("timestamp", 0.0);
  return cam;
}

}  // namespace nbv
