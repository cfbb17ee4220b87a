// scene.hpp
//
// Gaussian scene parameters, pinhole cameras, and the per-Gaussian geometry
// (3D covariance and its projection to the image plane).

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "nbvsplat/common.hpp"

namespace nbv {

inline constexpr int kDefaultFeatureDim = 8;

/// Parameter blocks, in flattened-layout order.
enum class Block { Position = 0, Rotation, LogScale, Opacity, Color, Feature };
inline constexpr int kBlockCount = 6;
const char* block_name(Block b);

/// All per-Gaussian parameters in their unconstrained form.
///
/// Rotations are scalar-first quaternions and are normalized when read, never
/// when stored. Scale is exp(log_scale) and opacity is sigmoid(opacity_logit),
/// so any real-valued parameter vector is a valid scene.
template <typename T>
struct BasicGaussianSet {
  RowMat<T> positions;    // N x 3, world units
  RowMat<T> rotations;    // N x 4, (w, x, y, z)
  RowMat<T> log_scales;   // N x 3
  Vec<T> opacity_logits;  // N
  RowMat<T> colors;       // N x 3
  RowMat<T> features;     // N x D_f

  static BasicGaussianSet zeros(Index n, Index feature_dim) {
    BasicGaussianSet s;
    s.positions = RowMat<T>::Zero(n, 3);
    s.rotations = RowMat<T>::Zero(n, 4);
    s.log_scales = RowMat<T>::Zero(n, 3);
    s.opacity_logits = Vec<T>::Zero(n);
    s.colors = RowMat<T>::Zero(n, 3);
    s.features = RowMat<T>::Zero(n, feature_dim);
    return s;
  }

  Index size() const { return positions.rows(); }
  Index feature_dim() const { return features.cols(); }

  bool consistent() const {
    const Index n = positions.rows();
    return positions.cols() == 3 && rotations.rows() == n && rotations.cols() == 4 &&
           log_scales.rows() == n && log_scales.cols() == 3 && opacity_logits.size() == n &&
           colors.rows() == n && colors.cols() == 3 && features.rows() == n;
  }
  void validate() const {
    NBV_REQUIRE(consistent(), ContractError, "GaussianSet blocks disagree on Gaussian count");
  }

  template <typename U>
  BasicGaussianSet<U> cast() const {
    BasicGaussianSet<U> s;
    s.positions = positions.template cast<U>();
    s.rotations = rotations.template cast<U>();
    s.log_scales = log_scales.template cast<U>();
    s.opacity_logits = opacity_logits.template cast<U>();
    s.colors = colors.template cast<U>();
    s.features = features.template cast<U>();
    return s;
  }

  // Gaussian i of the result is Gaussian order[i] of this set.
  BasicGaussianSet permuted(const std::vector<Index>& order) const {
    BasicGaussianSet s = zeros(Index(order.size()), feature_dim());
    for (Index i = 0; i < Index(order.size()); ++i) {
      const Index j = order[std::size_t(i)];
      s.positions.row(i) = positions.row(j);
      s.rotations.row(i) = rotations.row(j);
      s.log_scales.row(i) = log_scales.row(j);
      s.opacity_logits(i) = opacity_logits(j);
      s.colors.row(i) = colors.row(j);
      s.features.row(i) = features.row(j);
    }
    return s;
  }

  // Block storage is contiguous row-major, so each block is one flat span.
  T* block_data(Block b) {
    switch (b) {
      case Block::Position: return positions.data();
      case Block::Rotation: return rotations.data();
      case Block::LogScale: return log_scales.data();
      case Block::Opacity: return opacity_logits.data();
      case Block::Color: return colors.data();
      case Block::Feature: return features.data();
    }
    return nullptr;
  }
  const T* block_data(Block b) const { return const_cast<BasicGaussianSet*>(this)->block_data(b); }
};

using GaussianSet = BasicGaussianSet<double>;

/// Offsets of each block inside the flattened parameter vector.
struct ParamLayout {
  Index gaussians = 0;
  Index feature_dim = 0;

  ParamLayout() = default;
  ParamLayout(Index n, Index d) : gaussians(n), feature_dim(d) {}
  template <typename T>
  explicit ParamLayout(const BasicGaussianSet<T>& s) : gaussians(s.size()), feature_dim(s.feature_dim()) {}

  static Index width(Block b, Index feature_dim) {
    static constexpr Index kWidths[] = {3, 4, 3, 1, 3, 0};
    return b == Block::Feature ? feature_dim : kWidths[int(b)];
  }
  Index width(Block b) const { return width(b, feature_dim); }
  Index offset(Block b) const {
    Index off = 0;
    for (int i = 0; i < int(b); ++i) off += gaussians * width(Block(i));
    return off;
  }
  Index index(Block b, Index gaussian, Index component) const {
    return offset(b) + gaussian * width(b) + component;
  }
  Index total() const { return offset(Block::Feature) + gaussians * feature_dim; }
  bool operator==(const ParamLayout&) const = default;
};

template <typename T>
Vec<T> flatten(const BasicGaussianSet<T>& s) {
  const ParamLayout layout(s);
  Vec<T> out(layout.total());
  for (int b = 0; b < kBlockCount; ++b) {
    const Index n = layout.gaussians * layout.width(Block(b));
    std::copy_n(s.block_data(Block(b)), n, out.data() + layout.offset(Block(b)));
  }
  return out;
}

template <typename T>
BasicGaussianSet<T> unflatten(const Vec<T>& flat, const ParamLayout& layout) {
  NBV_REQUIRE(flat.size() == layout.total(), ContractError, "flat parameter vector has wrong length");
  auto s = BasicGaussianSet<T>::zeros(layout.gaussians, layout.feature_dim);
  for (int b = 0; b < kBlockCount; ++b) {
    const Index n = layout.gaussians * layout.width(Block(b));
    std::copy_n(flat.data() + layout.offset(Block(b)), n, s.block_data(Block(b)));
  }
  return s;
}

/// Pinhole camera with an SE(3) world-to-camera transform
/// (x_cam = rotation * x_world + translation; +z forward, +x right, +y down).
struct CameraView {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 32.0;
  double fy = 32.0;
  double cx = 15.5;
  double cy = 15.5;
  int width = 32;
  int height = 32;
  double timestamp = 0.0;

  static constexpr int kMinSize = 8;
  static constexpr int kMaxSize = 128;

  void validate() const;
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  // Camera at `eye` looking at `target`; focal length from the vertical field of view.
  static CameraView look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                            const Eigen::Vector3d& up, int width, int height,
                            double fov_y_degrees, double timestamp = 0.0);
  // Same camera rolled by `angle` radians about its optical axis.
  CameraView rolled(double angle) const;
  CameraView scaled_focal(double factor) const;
};

/// Rotation matrix of a quaternion (w, x, y, z); normalizes internally.
template <typename T>
Mat3T<T> rotation_from_quaternion(const Vec4T<T>& q_raw) {
  using std::sqrt;
  const T n2 = q_raw.squaredNorm();
  if (!(value_of(n2) > 0.0)) throw DegenerateInputError("zero-norm quaternion");
  const Vec4T<T> q = q_raw / sqrt(n2);
  const T w = q(0), x = q(1), y = q(2), z = q(3);
  Mat3T<T> r;
  r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
      T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
      T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
  return r;
}

/// 3D covariance R S^2 R^T with S = diag(exp(log_scale)).
template <typename T>
Mat3T<T> build_covariance(const Vec4T<T>& q, const Vec3T<T>& log_scale) {
  using std::exp;
  const Mat3T<T> r = rotation_from_quaternion(q);
  Mat3T<T> m;
  for (int j = 0; j < 3; ++j) {
    const T s = exp(log_scale(j));
    for (int i = 0; i < 3; ++i) m(i, j) = r(i, j) * s;
  }
  Mat3T<T> cov;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      T acc = m(i, 0) * m(j, 0);
      acc += m(i, 1) * m(j, 1);
      acc += m(i, 2) * m(j, 2);
      cov(i, j) = acc;
      cov(j, i) = acc;
    }
  }
  return cov;
}

template <typename T>
struct ProjectedGeometry {
  T depth;        // camera-space z
  Vec2T<T> mean;  // pixels
  Mat2T<T> cov;   // pixels^2
};

/// Projects a 3D Gaussian: cov' = J W cov W^T J^T with J the pinhole Jacobian at the
/// camera-space mean. Returns nullopt when the center is at or behind the near plane.
template <typename T>
std::optional<ProjectedGeometry<T>> project_gaussian(const Mat3T<T>& cov, const Vec3T<T>& x,
                                                     const CameraView& cam, double near_plane = 0.01) {
  using std::isfinite;
  const Mat3T<T> w = cam.rotation.cast<T>();
  const Vec3T<T> tc = w * x + cam.translation.cast<T>();
  if (!(value_of(tc(2)) > near_plane)) return std::nullopt;

  const T inv_z = T(1) / tc(2);
  const T fx = T(cam.fx), fy = T(cam.fy);
  Eigen::Matrix<T, 2, 3> jac;
  jac << fx * inv_z, T(0), -fx * tc(0) * inv_z * inv_z,
         T(0), fy * inv_z, -fy * tc(1) * inv_z * inv_z;

  ProjectedGeometry<T> out;
  out.depth = tc(2);
  out.mean << fx * tc(0) * inv_z + T(cam.cx), fy * tc(1) * inv_z + T(cam.cy);
  const Eigen::Matrix<T, 2, 3> t = jac * w;
  const Eigen::Matrix<T, 2, 3> tc3 = t * cov;
  T c00 = tc3.row(0).dot(t.row(0));
  T c01 = tc3.row(0).dot(t.row(1));
  T c11 = tc3.row(1).dot(t.row(1));
  out.cov << c00, c01, c01, c11;
  if (!isfinite(value_of(c00)) || !isfinite(value_of(c01)) || !isfinite(value_of(c11)) ||
      !isfinite(value_of(out.mean(0))) || !isfinite(value_of(out.mean(1))))
    throw NumericError("non-finite projected Gaussian");
  return out;
}

// JSON scene documents: {"gaussians": [{pos, quat, log_scale, opacity_logit, color, feature}, ...]}
nlohmann::json scene_to_json(const GaussianSet& scene);
GaussianSet scene_from_json(const nlohmann::json& doc);
void save_scene(const GaussianSet& scene, const std::string& path);
GaussianSet load_scene(const std::string& path);

nlohmann::json camera_to_json(const CameraView& cam);
CameraView camera_from_json(const nlohmann::json& doc);

}  // namespace nbv
