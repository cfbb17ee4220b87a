// render.hpp
//
// Exact per-pixel alpha-compositing rasterizer with reverse-mode gradients.
// Every routine is templated on the scalar type so the same code runs on
// doubles and on forward-mode duals (Hessian-vector products).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "nbvsplat/common.hpp"
#include "nbvsplat/scene.hpp"

namespace nbv {

struct RenderSettings {
  double near_plane = 0.01;
  double footprint_sigma = 3.0;  // Mahalanobis cutoff of each Gaussian's footprint
  double alpha_max = 0.999;
  double cov_regularization = 1e-6;  // added to the 2D covariance before inversion
};

template <typename T>
struct Contribution {
  int gaussian = 0;
  T alpha{};          // effective opacity, after clamping
  T transmittance{};  // product of (1 - alpha) over everything in front
  bool clamped = false;
  T weight() const { return alpha * transmittance; }
};

template <typename T>
struct BasicRenderOutput {
  BasicImage<T> color;     // H x W x 3
  BasicImage<T> features;  // H x W x D_f
  std::vector<std::vector<Contribution<T>>> contributions;  // per pixel, front to back
  std::vector<T> final_transmittance;                       // per pixel
};
using RenderOutput = BasicRenderOutput<double>;

namespace detail {

// Screen-space footprint of one visible Gaussian.
template <typename T>
struct Splat {
  int index = 0;
  double depth = 0.0;
  Vec2T<T> mean;
  T conic_a, conic_b, conic_c;  // inverse of the regularized 2D covariance
  T opacity;
  int row_min = 0, row_max = -1, col_min = 0, col_max = -1;
};

// Mean and conic (5 values) of Gaussian geometry (x, q, log_scale) seen from `cam`.
template <typename S>
std::optional<std::array<S, 5>> splat_geometry(const Vec3T<S>& x, const Vec4T<S>& q, const Vec3T<S>& log_scale,
                                               const CameraView& cam, const RenderSettings& settings,
                                               Mat2T<S>* cov_out = nullptr, S* depth_out = nullptr) {
  const Mat3T<S> cov3 = build_covariance(q, log_scale);
  const auto proj = project_gaussian(cov3, x, cam, settings.near_plane);
  if (!proj) return std::nullopt;
  Mat2T<S> cov = proj->cov;
  cov(0, 0) += S(settings.cov_regularization);
  cov(1, 1) += S(settings.cov_regularization);
  const S det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
  if (!(value_of(det) > 0.0)) throw NumericError("projected covariance is not positive definite");
  const S inv_det = S(1) / det;
  if (cov_out) *cov_out = cov;
  if (depth_out) *depth_out = proj->depth;
  return std::array<S, 5>{proj->mean(0), proj->mean(1), cov(1, 1) * inv_det, -cov(0, 1) * inv_det,
                          cov(0, 0) * inv_det};
}

template <typename T>
std::vector<Splat<T>> prepare_splats(const BasicGaussianSet<T>& scene, const CameraView& cam,
                                     const RenderSettings& settings) {
  using std::sqrt;
  std::vector<Splat<T>> splats;
  splats.reserve(std::size_t(scene.size()));
  const double k = settings.footprint_sigma;
  for (Index i = 0; i < scene.size(); ++i) {
    const Vec3T<T> x = scene.positions.row(i).transpose();
    const Vec4T<T> q = scene.rotations.row(i).transpose();
    const Vec3T<T> ls = scene.log_scales.row(i).transpose();
    Mat2T<T> cov;
    T depth;
    const auto geo = splat_geometry<T>(x, q, ls, cam, settings, &cov, &depth);
    if (!geo) continue;
    Splat<T> s;
    s.index = int(i);
    s.depth = value_of(depth);
    s.mean << (*geo)[0], (*geo)[1];
    s.conic_a = (*geo)[2];
    s.conic_b = (*geo)[3];
    s.conic_c = (*geo)[4];
    s.opacity = logistic(scene.opacity_logits(i));
    // Exact bounding box of the ellipse d^T cov^-1 d <= k^2.
    const double hx = k * std::sqrt(value_of(cov(0, 0)));
    const double hy = k * std::sqrt(value_of(cov(1, 1)));
    const double mx = value_of(s.mean(0)), my = value_of(s.mean(1));
    s.col_min = std::max(0, int(std::ceil(mx - hx)));
    s.col_max = std::min(cam.width - 1, int(std::floor(mx + hx)));
    s.row_min = std::max(0, int(std::ceil(my - hy)));
    s.row_max = std::min(cam.height - 1, int(std::floor(my + hy)));
    if (s.col_min > s.col_max || s.row_min > s.row_max) continue;
    splats.push_back(s);
  }
  std::stable_sort(splats.begin(), splats.end(), [](const Splat<T>& a, const Splat<T>& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
  });
  return splats;
}

// Per-pixel evaluation of one splat; returns false outside the footprint.
template <typename T>
struct PixelHit {
  T alpha;
  T gauss;   // exp(-m/2)
  T d0, d1;  // pixel minus mean
  bool clamped;
};

template <typename T>
bool evaluate_splat(const Splat<T>& s, int row, int col, const RenderSettings& settings, PixelHit<T>& hit) {
  using std::exp;
  if (row < s.row_min || row > s.row_max || col < s.col_min || col > s.col_max) return false;
  const T d0 = T(double(col)) - s.mean(0);
  const T d1 = T(double(row)) - s.mean(1);
  const T m = s.conic_a * d0 * d0 + T(2) * s.conic_b * d0 * d1 + s.conic_c * d1 * d1;
  const double cutoff = settings.footprint_sigma * settings.footprint_sigma;
  if (!(value_of(m) <= cutoff)) return false;
  hit.gauss = exp(T(-0.5) * m);
  T alpha = s.opacity * hit.gauss;
  hit.clamped = value_of(alpha) > settings.alpha_max;
  if (hit.clamped) alpha = T(settings.alpha_max);
  hit.alpha = alpha;
  hit.d0 = d0;
  hit.d1 = d1;
  return true;
}

// Per-pixel hit lists in depth order.
template <typename T>
struct PixelLists {
  std::vector<std::vector<int>> splat;  // indices into the sorted splat array
  std::vector<std::vector<PixelHit<T>>> hits;
};

template <typename T>
PixelLists<T> collect_hits(const std::vector<Splat<T>>& splats, const CameraView& cam,
                           const RenderSettings& settings) {
  const int npix = cam.width * cam.height;
  PixelLists<T> lists;
  lists.splat.resize(std::size_t(npix));
  lists.hits.resize(std::size_t(npix));
  PixelHit<T> hit;
  for (int si = 0; si < int(splats.size()); ++si) {
    const Splat<T>& s = splats[std::size_t(si)];
    for (int r = s.row_min; r <= s.row_max; ++r) {
      for (int c = s.col_min; c <= s.col_max; ++c) {
        if (!evaluate_splat(s, r, c, settings, hit)) continue;
        const int p = r * cam.width + c;
        lists.splat[std::size_t(p)].push_back(si);
        lists.hits[std::size_t(p)].push_back(hit);
      }
    }
  }
  return lists;
}

// Jacobian (5 x 10) of (mean, conic) with respect to (position, rotation, log_scale),
// by forward-mode differentiation of the projection.
template <typename T>
Eigen::Matrix<T, 5, 10> geometry_jacobian(const BasicGaussianSet<T>& scene, Index i, const CameraView& cam,
                                          const RenderSettings& settings) {
  using D = Dual<T>;
  Eigen::Matrix<T, 5, 10> jac;
  for (int k = 0; k < 10; ++k) {
    Vec3T<D> x, ls;
    Vec4T<D> q;
    for (int j = 0; j < 3; ++j) x(j) = D(scene.positions(i, j), T(k == j ? 1.0 : 0.0));
    for (int j = 0; j < 4; ++j) q(j) = D(scene.rotations(i, j), T(k == 3 + j ? 1.0 : 0.0));
    for (int j = 0; j < 3; ++j) ls(j) = D(scene.log_scales(i, j), T(k == 7 + j ? 1.0 : 0.0));
    const auto geo = splat_geometry<D>(x, q, ls, cam, settings);
    for (int o = 0; o < 5; ++o) jac(o, k) = (*geo)[std::size_t(o)].d;
  }
  return jac;
}

}  // namespace detail

/// Front-to-back alpha compositing of color and features.
template <typename T>
BasicRenderOutput<T> render(const BasicGaussianSet<T>& scene, const CameraView& cam,
                            const RenderSettings& settings = {}) {
  using std::isfinite;
  scene.validate();
  cam.validate();
  const auto splats = detail::prepare_splats(scene, cam, settings);
  const auto lists = detail::collect_hits(splats, cam, settings);
  const int npix = cam.width * cam.height;
  const int fdim = int(scene.feature_dim());

  BasicRenderOutput<T> out;
  out.color = BasicImage<T>(cam.height, cam.width, 3);
  out.features = BasicImage<T>(cam.height, cam.width, fdim);
  out.contributions.resize(std::size_t(npix));
  out.final_transmittance.assign(std::size_t(npix), T(1));
  for (int p = 0; p < npix; ++p) {
    const auto& idx = lists.splat[std::size_t(p)];
    const auto& hits = lists.hits[std::size_t(p)];
    T trans(1);
    T* color = out.color.pixel(p);
    T* feat = out.features.pixel(p);
    auto& contrib = out.contributions[std::size_t(p)];
    contrib.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const int g = splats[std::size_t(idx[k])].index;
      const T w = hits[k].alpha * trans;
      for (int ch = 0; ch < 3; ++ch) color[ch] += scene.colors(g, ch) * w;
      for (int ch = 0; ch < fdim; ++ch) feat[ch] += scene.features(g, ch) * w;
      contrib.push_back({g, hits[k].alpha, trans, hits[k].clamped});
      trans = trans * (T(1) - hits[k].alpha);
    }
    out.final_transmittance[std::size_t(p)] = trans;
    for (int ch = 0; ch < 3; ++ch)
      if (!isfinite(value_of(color[ch]))) throw NumericError("non-finite rendered color");
  }
  return out;
}

/// Gradient of sum(color_adjoint * C) + sum(feature_adjoint * F_s) with respect to
/// every scene parameter. An empty feature adjoint is treated as zero.
template <typename T>
BasicGaussianSet<T> render_backward(const BasicGaussianSet<T>& scene, const CameraView& cam,
                                    const BasicImage<T>& color_adjoint, const BasicImage<T>& feature_adjoint,
                                    const RenderSettings& settings = {}) {
  scene.validate();
  cam.validate();
  const int fdim = int(scene.feature_dim());
  NBV_REQUIRE(color_adjoint.height == cam.height && color_adjoint.width == cam.width && color_adjoint.channels == 3,
              ContractError, "color adjoint must be " + shape_string(cam.height, cam.width, 3));
  const bool has_feat = !feature_adjoint.empty();
  NBV_REQUIRE(!has_feat || (feature_adjoint.height == cam.height && feature_adjoint.width == cam.width &&
                            feature_adjoint.channels == fdim),
              ContractError, "feature adjoint must be " + shape_string(cam.height, cam.width, fdim));

  const auto splats = detail::prepare_splats(scene, cam, settings);
  const auto lists = detail::collect_hits(splats, cam, settings);
  const int nsplat = int(splats.size());
  const int npix = cam.width * cam.height;

  // Gradients with respect to per-splat screen-space quantities.
  std::vector<std::array<T, 5>> g_geo(static_cast<std::size_t>(nsplat));  // mean x, mean y, conic a, b, c
  std::vector<T> g_opacity(static_cast<std::size_t>(nsplat), T(0));
  for (auto& g : g_geo) g.fill(T(0));
  auto grad = BasicGaussianSet<T>::zeros(scene.size(), fdim);

  std::vector<T> suffix_feat(static_cast<std::size_t>(fdim));
  for (int p = 0; p < npix; ++p) {
    const auto& idx = lists.splat[std::size_t(p)];
    const auto& hits = lists.hits[std::size_t(p)];
    if (idx.empty()) continue;
    const T* adj_c = color_adjoint.pixel(p);
    const T* adj_f = has_feat ? feature_adjoint.pixel(p) : nullptr;

    // Forward transmittances.
    std::vector<T> trans(idx.size());
    T t(1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      trans[k] = t;
      t = t * (T(1) - hits[k].alpha);
    }
    // Reverse traversal with suffix sums S_k = sum_{j>k} c_j w_j.
    std::array<T, 3> suffix_col{T(0), T(0), T(0)};
    std::fill(suffix_feat.begin(), suffix_feat.end(), T(0));
    for (std::size_t kk = idx.size(); kk-- > 0;) {
      const auto& s = splats[std::size_t(idx[kk])];
      const auto& h = hits[kk];
      const int g = s.index;
      const T w = h.alpha * trans[kk];
      const T inv_one_minus = T(1) / (T(1) - h.alpha);
      T d_alpha(0);
      for (int ch = 0; ch < 3; ++ch) {
        const T c = scene.colors(g, ch);
        grad.colors(g, ch) += adj_c[ch] * w;
        d_alpha += adj_c[ch] * (c * trans[kk] - suffix_col[std::size_t(ch)] * inv_one_minus);
        suffix_col[std::size_t(ch)] += c * w;
      }
      if (has_feat) {
        for (int ch = 0; ch < fdim; ++ch) {
          const T f = scene.features(g, ch);
          grad.features(g, ch) += adj_f[ch] * w;
          d_alpha += adj_f[ch] * (f * trans[kk] - suffix_feat[std::size_t(ch)] * inv_one_minus);
          suffix_feat[std::size_t(ch)] += f * w;
        }
      }
      if (h.clamped) continue;
      const int si = idx[kk];
      // alpha = o * exp(-m/2)
      g_opacity[std::size_t(si)] += d_alpha * h.gauss;
      const T d_m = d_alpha * (T(-0.5) * h.alpha);
      auto& gg = g_geo[std::size_t(si)];
      gg[0] += d_m * T(-2) * (s.conic_a * h.d0 + s.conic_b * h.d1);
      gg[1] += d_m * T(-2) * (s.conic_b * h.d0 + s.conic_c * h.d1);
      gg[2] += d_m * h.d0 * h.d0;
      gg[3] += d_m * T(2) * h.d0 * h.d1;
      gg[4] += d_m * h.d1 * h.d1;
    }
  }

  for (int si = 0; si < nsplat; ++si) {
    const auto& s = splats[std::size_t(si)];
    const int g = s.index;
    const auto jac = detail::geometry_jacobian(scene, g, cam, settings);
    const auto& gg = g_geo[std::size_t(si)];
    for (int k = 0; k < 10; ++k) {
      T acc(0);
      for (int o = 0; o < 5; ++o) acc += gg[std::size_t(o)] * jac(o, k);
      if (k < 3) grad.positions(g, k) += acc;
      else if (k < 7) grad.rotations(g, k - 3) += acc;
      else grad.log_scales(g, k - 7) += acc;
    }
    grad.opacity_logits(g) += g_opacity[std::size_t(si)] * s.opacity * (T(1) - s.opacity);
  }
  return grad;
}

/// One entry of a sparse gradient row.
struct RowEntry {
  Index param;
  double value;
};

struct RowOptions {
  bool color = true;
  bool features = true;
  RenderSettings settings{};
  // Optional per-Gaussian 10x10 maps from upstream geometry parameters to the
  // rendered (position, rotation, log_scale); rows are right-multiplied by them.
  std::span<const Eigen::Matrix<double, 10, 10>> geometry_chain{};
};

/// Visits the gradient row of every output scalar. Channels 0..2 are color;
/// channel 3 + j is feature channel j. The visitor is called as
/// visit(pixel, channel, std::span<const RowEntry>).
template <typename Visitor>
void per_pixel_gradient_rows(const GaussianSet& scene, const CameraView& cam, Visitor&& visit,
                             const RowOptions& opts = {}) {
  scene.validate();
  cam.validate();
  const RenderSettings& settings = opts.settings;
  const ParamLayout layout(scene);
  const int fdim = int(scene.feature_dim());
  NBV_REQUIRE(opts.geometry_chain.empty() || Index(opts.geometry_chain.size()) == scene.size(), ContractError,
              "geometry chain must have one entry per Gaussian");
  const auto splats = detail::prepare_splats(scene, cam, settings);
  const auto lists = detail::collect_hits(splats, cam, settings);

  std::vector<Eigen::Matrix<double, 5, 10>> jacs(splats.size());
  for (std::size_t si = 0; si < splats.size(); ++si) {
    jacs[si] = detail::geometry_jacobian(scene, splats[si].index, cam, settings);
    if (!opts.geometry_chain.empty()) jacs[si] = jacs[si] * opts.geometry_chain[std::size_t(splats[si].index)];
  }

  const int npix = cam.width * cam.height;
  std::vector<RowEntry> row;
  std::vector<double> trans;
  for (int p = 0; p < npix; ++p) {
    const auto& idx = lists.splat[std::size_t(p)];
    const auto& hits = lists.hits[std::size_t(p)];
    trans.resize(idx.size());
    double t = 1.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      trans[k] = t;
      t *= 1.0 - hits[k].alpha;
    }
    const int first = opts.color ? 0 : 3;
    const int last = opts.features ? 3 + fdim : 3;
    for (int ch = first; ch < last; ++ch) {
      row.clear();
      const bool is_color = ch < 3;
      const Block value_block = is_color ? Block::Color : Block::Feature;
      const int comp = is_color ? ch : ch - 3;
      const RowMat<double>& values = is_color ? scene.colors : scene.features;
      double suffix = 0.0;
      for (std::size_t kk = idx.size(); kk-- > 0;) {
        const auto& s = splats[std::size_t(idx[kk])];
        const auto& h = hits[kk];
        const int g = s.index;
        const double w = h.alpha * trans[kk];
        const double v = values(g, comp);
        const double d_alpha = v * trans[kk] - suffix / (1.0 - h.alpha);
        suffix += v * w;
        row.push_back({layout.index(value_block, g, comp), w});
        if (h.clamped) continue;
        const double d_m = d_alpha * (-0.5 * h.alpha);
        Eigen::Matrix<double, 1, 5> gscreen;
        gscreen << d_m * -2.0 * (s.conic_a * h.d0 + s.conic_b * h.d1),
            d_m * -2.0 * (s.conic_b * h.d0 + s.conic_c * h.d1), d_m * h.d0 * h.d0, d_m * 2.0 * h.d0 * h.d1,
            d_m * h.d1 * h.d1;
        const Eigen::Matrix<double, 1, 10> geo = gscreen * jacs[std::size_t(idx[kk])];
        for (int k = 0; k < 3; ++k) row.push_back({layout.index(Block::Position, g, k), geo(k)});
        for (int k = 0; k < 4; ++k) row.push_back({layout.index(Block::Rotation, g, k), geo(3 + k)});
        for (int k = 0; k < 3; ++k) row.push_back({layout.index(Block::LogScale, g, k), geo(7 + k)});
        row.push_back({layout.index(Block::Opacity, g, 0), d_alpha * h.gauss * s.opacity * (1.0 - s.opacity)});
      }
      visit(p, ch, std::span<const RowEntry>(row));
    }
  }
}

}  // namespace nbv
