// deformation.hpp
//
// Time-conditioned deformation of a canonical Gaussian set. Each Gaussian's
// (x, t) is looked up bilinearly on six 2D feature planes, the six samples are
// concatenated and fused by a small MLP, and three heads predict offsets for
// position, rotation and log-scale.
//
// All parameters (grids followed by the four MLPs) live in one flat vector so
// that Fisher and Hessian-vector code can treat them uniformly.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "nbvsplat/dual.hpp"
#include "nbvsplat/mlp.hpp"
#include "nbvsplat/scene.hpp"

namespace nbv {

struct DeformationConfig {
  int grid_resolution = 16;
  int grid_channels = 8;
  int fusion_width = 32;
  int fused_dim = 32;
  int head_width = 32;
  Eigen::Vector3d bounds_min = Eigen::Vector3d::Constant(-1.5);
  Eigen::Vector3d bounds_max = Eigen::Vector3d::Constant(1.5);
  double grid_init_scale = 0.1;  // grids start uniform in [-scale, scale]

  void validate() const;
};

// Plane axes over the coordinate tuple (x, y, z, t).
inline constexpr std::array<std::array<int, 2>, 6> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

enum class Head { Position = 0, Rotation = 1, LogScale = 2 };

class DeformationNet {
 public:
  DeformationConfig config;
  Vec<double> params;

  DeformationNet() = default;
  explicit DeformationNet(const DeformationConfig& cfg);

  // Random grids and hidden layers; the last layer of every head is exactly zero.
  static DeformationNet create(const DeformationConfig& cfg, std::uint64_t seed);

  Index plane_size() const;
  Index grid_parameter_count() const { return 6 * plane_size(); }
  Index parameter_count() const;
  Index grid_index(int plane, int col, int row, int channel) const;

  const MlpSpec& fusion_spec() const { return fusion_; }
  const MlpSpec& head_spec(Head h) const { return heads_[std::size_t(h)]; }
  Index fusion_offset() const { return grid_parameter_count(); }
  Index head_offset(Head h) const;
  // Range [begin, end) of the final layer of a head inside params.
  std::pair<Index, Index> head_output_layer(Head h) const;

  void zero_heads();
  bool heads_are_zero() const;
  void validate() const;

 private:
  MlpSpec fusion_;
  std::array<MlpSpec, 3> heads_;
};

namespace detail {

template <typename T>
struct PlaneSample {
  Index base = 0;     // parameter index of the (col0, row0) node, channel 0
  T fa{}, fb{};       // fractional offsets along the two plane axes
};

}  // namespace detail

template <typename T>
struct EncodeTape {
  std::array<T, 4> coord{};               // grid coordinates of (x, y, z, t)
  std::array<bool, 4> clamped{};          // true when the coordinate hit the border
  std::array<detail::PlaneSample<T>, 6> samples{};
  MlpTape<T> fusion;
};

/// Fused feature F for a point x at time t, reading parameters from `params`
/// (which has the layout of net.params but may hold a different scalar type).
template <typename T>
Vec<T> encode(const DeformationNet& net, const T* params, const Vec3T<T>& x, double t,
              EncodeTape<T>* tape = nullptr) {
  using std::isfinite;
  NBV_REQUIRE(t >= 0.0 && t <= 1.0, ContractError, "time must lie in [0, 1]");
  for (int k = 0; k < 3; ++k)
    NBV_REQUIRE(isfinite(value_of(x(k))), NumericError, "non-finite coordinate passed to the deformation encoder");
  const DeformationConfig& cfg = net.config;
  const int g = cfg.grid_resolution;
  const int de = cfg.grid_channels;
  const double top = double(g - 1);

  EncodeTape<T> local;
  EncodeTape<T>& tp = tape ? *tape : local;
  for (int k = 0; k < 3; ++k) {
    const double lo = cfg.bounds_min(k), hi = cfg.bounds_max(k);
    T u = (x(k) - T(lo)) * T(top / (hi - lo));
    tp.clamped[std::size_t(k)] = false;
    if (u < 0.0) {
      u = T(0.0);
      tp.clamped[std::size_t(k)] = true;
    } else if (u > top) {
      u = T(top);
      tp.clamped[std::size_t(k)] = true;
    }
    tp.coord[std::size_t(k)] = u;
  }
  tp.coord[3] = T(t * top);
  tp.clamped[3] = true;  // time never receives a gradient

  Vec<T> concat(6 * de);
  for (int pl = 0; pl < 6; ++pl) {
    const T ua = tp.coord[std::size_t(kPlaneAxes[std::size_t(pl)][0])];
    const T ub = tp.coord[std::size_t(kPlaneAxes[std::size_t(pl)][1])];
    const int ia = std::min(int(std::floor(value_of(ua))), g - 2);
    const int ib = std::min(int(std::floor(value_of(ub))), g - 2);
    auto& smp = tp.samples[std::size_t(pl)];
    smp.base = net.grid_index(pl, ia, ib, 0);
    smp.fa = ua - T(double(ia));
    smp.fb = ub - T(double(ib));
    const T w00 = (T(1) - smp.fa) * (T(1) - smp.fb);
    const T w10 = smp.fa * (T(1) - smp.fb);
    const T w01 = (T(1) - smp.fa) * smp.fb;
    const T w11 = smp.fa * smp.fb;
    const T* v00 = params + smp.base;
    const T* v10 = v00 + de;
    const T* v01 = v00 + Index(g) * de;
    const T* v11 = v01 + de;
    for (int c = 0; c < de; ++c) concat(pl * de + c) = w00 * v00[c] + w10 * v10[c] + w01 * v01[c] + w11 * v11[c];
  }
  return mlp_forward(net.fusion_spec(), params + net.fusion_offset(), concat, &tp.fusion);
}

/// Reverse mode through encode: accumulates into grad_params and returns the
/// gradient with respect to x (zero along clamped axes).
template <typename T>
Vec3T<T> encode_backward(const DeformationNet& net, const T* params, const EncodeTape<T>& tp, const Vec<T>& grad_fused,
                         T* grad_params) {
  const DeformationConfig& cfg = net.config;
  const int g = cfg.grid_resolution;
  const int de = cfg.grid_channels;
  const Vec<T> gcat =
      mlp_backward(net.fusion_spec(), params + net.fusion_offset(), tp.fusion, grad_fused, grad_params + net.fusion_offset());
  std::array<T, 4> gcoord{T(0), T(0), T(0), T(0)};
  for (int pl = 0; pl < 6; ++pl) {
    const auto& smp = tp.samples[std::size_t(pl)];
    const T fa = smp.fa, fb = smp.fb;
    const T w00 = (T(1) - fa) * (T(1) - fb), w10 = fa * (T(1) - fb), w01 = (T(1) - fa) * fb, w11 = fa * fb;
    const Index i00 = smp.base, i10 = i00 + de, i01 = i00 + Index(g) * de, i11 = i01 + de;
    T ga(0), gb(0);
    for (int c = 0; c < de; ++c) {
      const T gc = gcat(pl * de + c);
      grad_params[i00 + c] += gc * w00;
      grad_params[i10 + c] += gc * w10;
      grad_params[i01 + c] += gc * w01;
      grad_params[i11 + c] += gc * w11;
      const T v00 = params[i00 + c], v10 = params[i10 + c], v01 = params[i01 + c], v11 = params[i11 + c];
      ga += gc * ((T(1) - fb) * (v10 - v00) + fb * (v11 - v01));
      gb += gc * ((T(1) - fa) * (v01 - v00) + fa * (v11 - v10));
    }
    gcoord[std::size_t(kPlaneAxes[std::size_t(pl)][0])] += ga;
    gcoord[std::size_t(kPlaneAxes[std::size_t(pl)][1])] += gb;
  }
  Vec3T<T> gx;
  for (int k = 0; k < 3; ++k) {
    const double scale = double(g - 1) / (cfg.bounds_max(k) - cfg.bounds_min(k));
    gx(k) = tp.clamped[std::size_t(k)] ? T(0) : gcoord[std::size_t(k)] * T(scale);
  }
  return gx;
}

inline Vec<double> encode(const DeformationNet& net, const Eigen::Vector3d& x, double t) {
  return encode<double>(net, net.params.data(), Vec3T<double>(x), t);
}

template <typename T>
struct DeformTape {
  EncodeTape<T> encode;
  std::array<MlpTape<T>, 3> heads;
  Vec4T<T> raw_rotation;  // q + dr before normalization
  bool normalized = false;
};

template <typename T>
struct DeformedGaussian {
  Vec3T<T> position;
  Vec4T<T> rotation;
  Vec3T<T> log_scale;
};

/// Deforms one Gaussian. The rotation is renormalized whenever its offset is
/// nonzero; a zero offset passes the quaternion through untouched so that an
/// untrained net is an exact identity.
template <typename T>
DeformedGaussian<T> deform_gaussian(const DeformationNet& net, const T* params, const Vec3T<T>& x, const Vec4T<T>& q,
                                    const Vec3T<T>& log_scale, double t, DeformTape<T>* tape = nullptr) {
  using std::sqrt;
  DeformTape<T> local;
  DeformTape<T>& tp = tape ? *tape : local;
  const Vec<T> fused = encode(net, params, x, t, &tp.encode);
  const Vec<T> dx = mlp_forward(net.head_spec(Head::Position), params + net.head_offset(Head::Position), fused,
                                &tp.heads[0]);
  const Vec<T> dr = mlp_forward(net.head_spec(Head::Rotation), params + net.head_offset(Head::Rotation), fused,
                                &tp.heads[1]);
  const Vec<T> ds = mlp_forward(net.head_spec(Head::LogScale), params + net.head_offset(Head::LogScale), fused,
                                &tp.heads[2]);
  DeformedGaussian<T> out;
  out.position = x + dx;
  out.log_scale = log_scale + ds;
  tp.raw_rotation = q + dr;
  tp.normalized = false;
  for (int k = 0; k < 4; ++k)
    if (dr(k) != 0.0) tp.normalized = true;
  if (tp.normalized) {
    const T n = sqrt(tp.raw_rotation.squaredNorm());
    NBV_REQUIRE(n > 0.0, DegenerateInputError, "deformed quaternion vanished");
    out.rotation = tp.raw_rotation / n;
  } else {
    out.rotation = tp.raw_rotation;
  }
  return out;
}

/// Reverse mode through deform_gaussian. Gradients with respect to the canonical
/// (x, q, s) are written to gx, gq, gs; parameter gradients are accumulated.
template <typename T>
void deform_gaussian_backward(const DeformationNet& net, const T* params, const DeformTape<T>& tp,
                              const Vec3T<T>& g_pos, const Vec4T<T>& g_rot, const Vec3T<T>& g_scale, T* grad_params,
                              Vec3T<T>& gx, Vec4T<T>& gq, Vec3T<T>& gs) {
  using std::sqrt;
  Vec4T<T> g_raw = g_rot;
  if (tp.normalized) {
    const T n = sqrt(tp.raw_rotation.squaredNorm());
    const Vec4T<T> u = tp.raw_rotation / n;
    g_raw = (g_rot - u * u.dot(g_rot)) / n;
  }
  const Vec<T> gdx = g_pos;
  const Vec<T> gdr = g_raw;
  const Vec<T> gds = g_scale;
  Vec<T> gf = mlp_backward(net.head_spec(Head::Position), params + net.head_offset(Head::Position), tp.heads[0], gdx,
                           grad_params + net.head_offset(Head::Position));
  gf += mlp_backward(net.head_spec(Head::Rotation), params + net.head_offset(Head::Rotation), tp.heads[1], gdr,
                     grad_params + net.head_offset(Head::Rotation));
  gf += mlp_backward(net.head_spec(Head::LogScale), params + net.head_offset(Head::LogScale), tp.heads[2], gds,
                     grad_params + net.head_offset(Head::LogScale));
  gx = g_pos + encode_backward(net, params, tp.encode, gf, grad_params);
  gq = g_raw;
  gs = g_scale;
}

/// Deformed copy of the scene at time t; opacity, color and features are unchanged.
template <typename T>
BasicGaussianSet<T> deform(const BasicGaussianSet<T>& scene, const DeformationNet& net, const T* params, double t) {
  scene.validate();
  BasicGaussianSet<T> out = scene;
  for (Index i = 0; i < scene.size(); ++i) {
    const auto d = deform_gaussian<T>(net, params, scene.positions.row(i).transpose(),
                                      scene.rotations.row(i).transpose(), scene.log_scales.row(i).transpose(), t);
    out.positions.row(i) = d.position.transpose();
    out.rotations.row(i) = d.rotation.transpose();
    out.log_scales.row(i) = d.log_scale.transpose();
  }
  return out;
}

inline GaussianSet deform(const GaussianSet& scene, const DeformationNet& net, double t) {
  return deform<double>(scene, net, net.params.data(), t);
}

template <typename T>
struct DeformGradient {
  BasicGaussianSet<T> scene;  // gradient with respect to the canonical scene
  Vec<T> params;              // gradient with respect to the network parameters
};

/// Pulls a gradient with respect to the deformed scene back to the canonical
/// scene and the network parameters.
template <typename T>
DeformGradient<T> deform_backward(const BasicGaussianSet<T>& scene, const DeformationNet& net, const T* params,
                                  double t, const BasicGaussianSet<T>& grad_deformed) {
  scene.validate();
  NBV_REQUIRE(grad_deformed.size() == scene.size() && grad_deformed.feature_dim() == scene.feature_dim(),
              ContractError, "gradient does not match the scene shape");
  DeformGradient<T> out{grad_deformed, Vec<T>::Zero(net.parameter_count())};
  DeformTape<T> tape;
  for (Index i = 0; i < scene.size(); ++i) {
    deform_gaussian<T>(net, params, scene.positions.row(i).transpose(), scene.rotations.row(i).transpose(),
                       scene.log_scales.row(i).transpose(), t, &tape);
    Vec3T<T> gx, gs;
    Vec4T<T> gq;
    deform_gaussian_backward<T>(net, params, tape, grad_deformed.positions.row(i).transpose(),
                                grad_deformed.rotations.row(i).transpose(),
                                grad_deformed.log_scales.row(i).transpose(), out.params.data(), gx, gq, gs);
    out.scene.positions.row(i) = gx.transpose();
    out.scene.rotations.row(i) = gq.transpose();
    out.scene.log_scales.row(i) = gs.transpose();
  }
  return out;
}

/// Per-Gaussian 10x10 Jacobian of the deformed (position, rotation, log_scale)
/// with respect to the canonical ones, by forward mode.
std::vector<Eigen::Matrix<double, 10, 10>> deformation_geometry_jacobians(const GaussianSet& scene,
                                                                          const DeformationNet& net, double t);

}  // namespace nbv
