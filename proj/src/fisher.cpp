#include "nbvsplat/fisher.hpp"

#include <cmath>

namespace nbv {

void FisherDiagonal::validate() const {
  NBV_REQUIRE(values.allFinite(), NumericError, "Fisher diagonal has non-finite entries");
  NBV_REQUIRE(size() == 0 || values.minCoeff() >= 0.0, ContractError, "Fisher diagonal has negative entries");
}

FisherDiagonal& FisherDiagonal::operator+=(const FisherDiagonal& other) {
  NBV_REQUIRE(size() == other.size(), ContractError,
              "Fisher layouts differ: " + std::to_string(size()) + " vs " + std::to_string(other.size()));
  values += other.values;
  return *this;
}

FisherDiagonal accumulate_train(const FisherDiagonal& train, const FisherDiagonal& view) {
  FisherDiagonal out = train;
  out += view;
  return out;
}

double eig(const FisherDiagonal& candidate, const FisherDiagonal& train, double lambda) {
  NBV_REQUIRE(lambda >= 0.0, ContractError, "lambda must be nonnegative");
  NBV_REQUIRE(candidate.size() == train.size(), ContractError, "candidate and train Fisher layouts differ");
  double total = 0.0;
  for (Index j = 0; j < candidate.size(); ++j) {
    const double c = candidate.values(j);
    if (c == 0.0) continue;
    const double denom = train.values(j) + lambda;
    if (denom <= 0.0)
      throw DivisionGuardError("information gain: parameter " + std::to_string(j) +
                               " has zero training information and no regularization");
    total += c / denom;
  }
  return total;
}

FisherComponents fisher_components(const GaussianSet& scene, const CameraView& cam, const FisherOptions& opts) {
  const Index n = ParamLayout(scene).total();
  FisherComponents out{FisherDiagonal::zeros(n), FisherDiagonal::zeros(n)};
  RowOptions ro;
  ro.settings = opts.settings;
  ro.geometry_chain = opts.geometry_chain;
  per_pixel_gradient_rows(
      scene, cam,
      [&](int, int channel, std::span<const RowEntry> row) {
        Vec<double>& acc = channel < 3 ? out.color.values : out.features.values;
        for (const RowEntry& e : row) acc(e.param) += e.value * e.value;
      },
      ro);
  return out;
}

FisherDiagonal fisher_diag(const GaussianSet& scene, const CameraView& cam, bool include_semantic,
                           const FisherOptions& opts) {
  if (!include_semantic) {
    const Index n = ParamLayout(scene).total();
    FisherDiagonal out = FisherDiagonal::zeros(n);
    RowOptions ro;
    ro.settings = opts.settings;
    ro.geometry_chain = opts.geometry_chain;
    ro.features = false;
    per_pixel_gradient_rows(
        scene, cam,
        [&](int, int, std::span<const RowEntry> row) {
          for (const RowEntry& e : row) out.values(e.param) += e.value * e.value;
        },
        ro);
    return out;
  }
  FisherComponents c = fisher_components(scene, cam, opts);
  c.color += c.features;
  return c.color;
}

const char* method_name(DeformationScoreMethod m) {
  return m == DeformationScoreMethod::Hutchinson ? "hutchinson" : "grad-outer-trace";
}

DeformationInfoScore deformation_score_grad(const GaussianSet& scene, const DeformationNet& net, const CameraView& cam,
                                            double t, const Image& target, const RenderSettings& settings) {
  const Vec<double> g = deformation_loss_gradient(scene, net, cam, t, target, settings);
  return {g.squaredNorm(), DeformationScoreMethod::GradOuterTrace, 0};
}

Vec<double> deformation_hvp(const GaussianSet& scene, const DeformationNet& net, const CameraView& cam, double t,
                            const Image& target, const Vec<double>& v, const RenderSettings& settings) {
  return hessian_vector_product(
      [&](const Vec<Dual<double>>& p) {
        return deformation_loss_gradient<Dual<double>>(scene, net, p.data(), cam, t, target, settings);
      },
      net.params, v);
}

DeformationInfoScore deformation_score_hutchinson(const GaussianSet& scene, const DeformationNet& net,
                                                  const CameraView& cam, double t, const Image& target, int n_probes,
                                                  std::uint64_t seed, const RenderSettings& settings) {
  const auto est = hutchinson_squared_norm(
      [&](const Vec<double>& v) { return deformation_hvp(scene, net, cam, t, target, v, settings); },
      net.parameter_count(), n_probes, seed);
  return {est.mean, DeformationScoreMethod::Hutchinson, n_probes};
}

namespace {

// Rows of d(deformed geometry of Gaussian i)/d(params), stacked as 10 N x P.
RowMat<double> deformation_parameter_jacobian(const GaussianSet& scene, const DeformationNet& net, double t) {
  const Index n = scene.size();
  RowMat<double> jac = RowMat<double>::Zero(10 * n, net.parameter_count());
  DeformTape<double> tape;
  for (Index i = 0; i < n; ++i) {
    deform_gaussian<double>(net, net.params.data(), scene.positions.row(i).transpose(),
                            scene.rotations.row(i).transpose(), scene.log_scales.row(i).transpose(), t, &tape);
    for (int k = 0; k < 10; ++k) {
      Vec3T<double> gp = Vec3T<double>::Zero(), gs = Vec3T<double>::Zero();
      Vec4T<double> gr = Vec4T<double>::Zero();
      if (k < 3) gp(k) = 1.0;
      else if (k < 7) gr(k - 3) = 1.0;
      else gs(k - 7) = 1.0;
      Vec3T<double> gx, gs_out;
      Vec4T<double> gq;
      deform_gaussian_backward<double>(net, net.params.data(), tape, gp, gr, gs, jac.row(10 * i + k).data(), gx, gq,
                                       gs_out);
    }
  }
  return jac;
}

}  // namespace

Image fisher_heatmap(const GaussianSet& scene, const CameraView& cam, const DeformationNet* net, double t,
                     const RenderSettings& settings) {
  Image heat(cam.height, cam.width, 1);
  RowOptions ro;
  ro.settings = settings;
  if (!net) {
    per_pixel_gradient_rows(
        scene, cam,
        [&](int p, int, std::span<const RowEntry> row) {
          double& h = heat.data[std::size_t(p)];
          for (const RowEntry& e : row) h += e.value * e.value;
        },
        ro);
    return heat;
  }

  // Rows over the deformation parameters are a_o^T P where a_o holds the
  // rendered-geometry entries of row o; their squared norm is a_o^T (P P^T) a_o.
  const GaussianSet deformed = deform(scene, *net, t);
  const Index n = scene.size();
  const RowMat<double> jac = deformation_parameter_jacobian(scene, *net, t);
  const RowMat<double> gram = jac * jac.transpose();
  const Index n3 = 3 * n, n7 = 7 * n, n10 = 10 * n;
  std::vector<std::pair<Index, double>> geo;
  per_pixel_gradient_rows(
      deformed, cam,
      [&](int p, int, std::span<const RowEntry> row) {
        geo.clear();
        for (const RowEntry& e : row) {
          const Index j = e.param;
          if (j >= n10) continue;
          Index slot;
          if (j < n3) slot = 10 * (j / 3) + j % 3;
          else if (j < n7) slot = 10 * ((j - n3) / 4) + 3 + (j - n3) % 4;
          else slot = 10 * ((j - n7) / 3) + 7 + (j - n7) % 3;
          geo.emplace_back(slot, e.value);
        }
        double q = 0.0;
        for (const auto& [a, va] : geo)
          for (const auto& [b, vb] : geo) q += va * gram(a, b) * vb;
        heat.data[std::size_t(p)] += std::max(q, 0.0);
      },
      ro);
  return heat;
}

}  // namespace nbv
