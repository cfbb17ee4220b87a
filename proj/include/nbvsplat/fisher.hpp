// fisher.hpp
//
// Diagonal Fisher information of rendered outputs with respect to Gaussian
// parameters, the regularized information-gain ratio used to rank views, and
// two information proxies for the deformation network: the squared gradient
// norm and a Hutchinson estimate of tr(H^2) built from Hessian-vector products.

#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "nbvsplat/deformation.hpp"
#include "nbvsplat/dual.hpp"
#include "nbvsplat/render.hpp"

namespace nbv {

inline constexpr double kDefaultFisherLambda = 1e-6;

using GeometryChain = Eigen::Matrix<double, 10, 10>;

/// One nonnegative entry per scalar Gaussian parameter, in ParamLayout order.
struct FisherDiagonal {
  Vec<double> values;

  static FisherDiagonal zeros(Index n) { return {Vec<double>::Zero(n)}; }
  Index size() const { return values.size(); }
  void validate() const;
  FisherDiagonal& operator+=(const FisherDiagonal& other);
};

FisherDiagonal accumulate_train(const FisherDiagonal& train, const FisherDiagonal& view);

/// sum_j candidate_j / (train_j + lambda). Throws DivisionGuardError when a
/// nonzero candidate entry meets a zero denominator.
double eig(const FisherDiagonal& candidate, const FisherDiagonal& train, double lambda);

struct FisherOptions {
  RenderSettings settings{};
  // Per-Gaussian maps from canonical to rendered geometry (dynamic mode).
  std::span<const GeometryChain> geometry_chain{};
};

/// Fisher diagonals from the RGB rows and from the feature rows, computed in one pass.
struct FisherComponents {
  FisherDiagonal color;
  FisherDiagonal features;
};

FisherComponents fisher_components(const GaussianSet& scene, const CameraView& cam, const FisherOptions& opts = {});

/// RGB rows, plus feature rows when include_semantic is set.
FisherDiagonal fisher_diag(const GaussianSet& scene, const CameraView& cam, bool include_semantic,
                           const FisherOptions& opts = {});

// ---------------------------------------------------------------------------
// Deformation-network information

enum class DeformationScoreMethod { GradOuterTrace, Hutchinson };
const char* method_name(DeformationScoreMethod m);

struct DeformationInfoScore {
  double value = 0.0;
  DeformationScoreMethod method = DeformationScoreMethod::Hutchinson;
  int probes = 0;
};

/// Gradient of || target - render(deform(scene, t)) ||^2 (RGB) with respect to
/// the deformation parameters, for any scalar type.
template <typename T>
Vec<T> deformation_loss_gradient(const GaussianSet& scene, const DeformationNet& net, const T* params,
                                 const CameraView& cam, double t, const Image& target,
                                 const RenderSettings& settings = {}) {
  NBV_REQUIRE(target.height == cam.height && target.width == cam.width && target.channels == 3, ContractError,
              "deformation target must be " + shape_string(cam.height, cam.width, 3));
  const BasicGaussianSet<T> canon = scene.template cast<T>();
  const BasicGaussianSet<T> deformed = deform<T>(canon, net, params, t);
  const BasicRenderOutput<T> out = render<T>(deformed, cam, settings);
  BasicImage<T> adj(cam.height, cam.width, 3);
  for (std::size_t i = 0; i < adj.data.size(); ++i) adj.data[i] = T(2) * (out.color.data[i] - T(target.data[i]));
  const BasicGaussianSet<T> g_def = render_backward<T>(deformed, cam, adj, BasicImage<T>{}, settings);
  return deform_backward<T>(canon, net, params, t, g_def).params;
}

inline Vec<double> deformation_loss_gradient(const GaussianSet& scene, const DeformationNet& net,
                                             const CameraView& cam, double t, const Image& target,
                                             const RenderSettings& settings = {}) {
  return deformation_loss_gradient<double>(scene, net, net.params.data(), cam, t, target, settings);
}

/// ||g||^2, the trace of the gradient outer product.
DeformationInfoScore deformation_score_grad(const GaussianSet& scene, const DeformationNet& net, const CameraView& cam,
                                            double t, const Image& target, const RenderSettings& settings = {});

/// H v for the same loss, by forward-mode differentiation of the gradient.
Vec<double> deformation_hvp(const GaussianSet& scene, const DeformationNet& net, const CameraView& cam, double t,
                            const Image& target, const Vec<double>& v, const RenderSettings& settings = {});

/// Hessian-vector product of any gradient routine that is generic in its scalar type.
template <typename GradFn>
Vec<double> hessian_vector_product(GradFn&& grad, const Vec<double>& x, const Vec<double>& v) {
  NBV_REQUIRE(x.size() == v.size(), ContractError, "probe length differs from parameter length");
  Vec<Dual<double>> xd(x.size());
  for (Index i = 0; i < x.size(); ++i) xd(i) = Dual<double>(x(i), v(i));
  const Vec<Dual<double>> g = grad(xd);
  Vec<double> hv(g.size());
  for (Index i = 0; i < g.size(); ++i) hv(i) = g(i).d;
  return hv;
}

struct HutchinsonEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> samples;  // ||H v_k||^2 per probe
};

/// Mean of ||H v||^2 over standard-normal probes v; estimates tr(H^2).
template <typename Hvp>
HutchinsonEstimate hutchinson_squared_norm(Hvp&& hvp, Index dim, int n_probes, std::uint64_t seed) {
  using std::isfinite;
  NBV_REQUIRE(n_probes >= 1, ContractError, "Hutchinson needs at least one probe");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  HutchinsonEstimate est;
  est.samples.reserve(std::size_t(n_probes));
  Vec<double> v(dim);
  for (int k = 0; k < n_probes; ++k) {
    for (Index i = 0; i < dim; ++i) v(i) = normal(rng);
    const Vec<double> hv = hvp(v);
    const double s = hv.squaredNorm();
    NBV_REQUIRE(isfinite(s), NumericError, "non-finite Hessian-vector product");
    est.samples.push_back(s);
    est.mean += s;
  }
  est.mean /= n_probes;
  if (n_probes > 1) {
    double var = 0.0;
    for (double s : est.samples) var += (s - est.mean) * (s - est.mean);
    est.standard_error = std::sqrt(var / (n_probes - 1) / n_probes);
  }
  return est;
}

DeformationInfoScore deformation_score_hutchinson(const GaussianSet& scene, const DeformationNet& net,
                                                  const CameraView& cam, double t, const Image& target, int n_probes,
                                                  std::uint64_t seed, const RenderSettings& settings = {});

// ---------------------------------------------------------------------------
// Heatmaps

/// Per-pixel sum of squared gradient rows (H x W x 1). Without a deformation net
/// the rows run over every Gaussian parameter (RGB and feature outputs); with
/// one, the scene is deformed to time t and the rows run over the deformation
/// parameters.
Image fisher_heatmap(const GaussianSet& scene, const CameraView& cam, const DeformationNet* net = nullptr,
                     double t = 0.0, const RenderSettings& settings = {});

}  // namespace nbv
