#include <random>

#include "doctest.h"
#include "nbvsplat/fisher.hpp"
#include "test_util.hpp"

using namespace nbv;

namespace {

DeformationConfig tiny_config() {
  DeformationConfig cfg;
  cfg.grid_resolution = 4;
  cfg.grid_channels = 2;
  cfg.fusion_width = 4;
  cfg.fused_dim = 3;
  cfg.head_width = 3;
  cfg.bounds_min = Eigen::Vector3d::Constant(-1.0);
  cfg.bounds_max = Eigen::Vector3d::Constant(1.0);
  cfg.grid_init_scale = 0.5;
  return cfg;
}


Vec<double> column_sq_norms(const RowMat<double>& jac) { return jac.colwise().squaredNorm().transpose(); }

}  // namespace

TEST_CASE("fisher_diag of an invisible scene is zero") {
  std::mt19937_64 rng(1);
  GaussianSet scene = testing::random_scene(rng, 4);
  scene.positions.col(1).array() -= 10.0;  // behind the camera at y = -4
  const auto f = fisher_diag(scene, testing::front_camera(8), true);
  CHECK(f.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single Gaussian: color entries equal the sum of squared compositing weights") {
  auto scene = GaussianSet::zeros(1, 2);
  scene.rotations(0, 0) = 1.0;
  scene.log_scales.setConstant(std::log(0.3));
  scene.opacity_logits(0) = 0.4;
  scene.colors.row(0) << 0.2, 0.5, 0.9;
  const CameraView cam = testing::front_camera(12);
  const RenderOutput out = render(scene, cam);
  double sum_w2 = 0.0;
  for (const auto& px : out.contributions)
    for (const auto& c : px) sum_w2 += c.weight() * c.weight();
  const auto f = fisher_diag(scene, cam, false);
  const ParamLayout layout(scene);
  for (int ch = 0; ch < 3; ++ch) CHECK(f.values(layout.index(Block::Color, 0, ch)) == doctest::Approx(sum_w2));
  CHECK(f.values(layout.index(Block::Feature, 0, 1)) == 0.0);
  const auto fs = fisher_diag(scene, cam, true);
  CHECK(fs.values(layout.index(Block::Feature, 0, 1)) == doctest::Approx(sum_w2));
}

TEST_CASE("fisher_diag equals diag(J^T J) from a brute-force Jacobian") {
  std::mt19937_64 rng(2);
  const CameraView cam = testing::front_camera(8, 4.0, 40.0);
  for (int trial = 0; trial < 5; ++trial) {
    const GaussianSet scene = testing::random_scene(rng, 3, {.extent = 0.5, .log_scale_min = -1.6, .log_scale_max = -1.0});
    const ParamLayout layout(scene);
    for (bool sem : {false, true}) {
      const auto outputs = [&](const Vec<double>& x) { return testing::stack_outputs(render(unflatten(x, layout), cam), sem); };
      const RowMat<double> jac = testing::finite_difference_jacobian(outputs, flatten(scene), 1e-6);
      const auto f = fisher_diag(scene, cam, sem);
      CHECK(f.values.minCoeff() >= 0.0);
      const auto rep = testing::compare_relative(f.values, column_sq_norms(jac));
      INFO("trial " << trial << " semantic " << sem << " worst " << rep.worst);
      CHECK(rep.max_rel < 1e-3);
    }
  }
}

TEST_CASE("semantic switch off reproduces the RGB-only component exactly") {
  std::mt19937_64 rng(3);
  const GaussianSet scene = testing::random_scene(rng, 6);
  const CameraView cam = testing::front_camera(12);
  const auto comp = fisher_components(scene, cam);
  CHECK(fisher_diag(scene, cam, false).values == comp.color.values);
  // feature rows carry no color or feature-of-other-channel entries
  const ParamLayout layout(scene);
  CHECK(comp.features.values.segment(layout.offset(Block::Color), 3 * scene.size()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(comp.color.values.segment(layout.offset(Block::Feature), layout.total() - layout.offset(Block::Feature))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("chained Fisher matches the Jacobian of render(deform(.)) in canonical parameters") {
  std::mt19937_64 rng(4);
  const CameraView cam = testing::front_camera(8, 4.0, 40.0);
  const GaussianSet scene = testing::random_scene(rng, 3, {.extent = 0.5, .log_scale_min = -1.6, .log_scale_max = -1.0, .feature_dim = 3});
  const DeformationNet net = testing::active_net(tiny_config(), 5, 0.2);
  const double t = 0.35;
  const ParamLayout layout(scene);
  const auto chain = deformation_geometry_jacobians(scene, net, t);
  FisherOptions opts;
  opts.geometry_chain = chain;
  const auto f = fisher_diag(deform(scene, net, t), cam, true, opts);
  const auto outputs = [&](const Vec<double>& x) {
    return testing::stack_outputs(render(deform(unflatten(x, layout), net, t), cam), true);
  };
  const RowMat<double> jac = testing::finite_difference_jacobian(outputs, flatten(scene), 1e-6);
  CHECK(testing::compare_relative(f.values, column_sq_norms(jac)).max_rel < 1e-3);
}

TEST_CASE("eig arithmetic and guard") {
  FisherDiagonal cand{Vec<double>(3)}, train{Vec<double>(3)};
  cand.values << 1, 2, 0;
  train.values << 1, 0, 3;
  CHECK(eig(cand, train, 1.0) == 2.5);
  CHECK(eig(FisherDiagonal::zeros(3), train, 0.0) == 0.0);
  CHECK_THROWS_AS(eig(cand, train, 0.0), DivisionGuardError);
  for (double lambda : {1e-7, 1e-6, 1e-5}) CHECK_NOTHROW(eig(cand, train, lambda));

  FisherDiagonal pos{Vec<double>(4)};
  pos.values << 0.5, 2.0, 3.0, 1e-3;
  CHECK(eig(pos, pos, 0.0) == 4.0);
  CHECK_THROWS_AS(eig(cand, FisherDiagonal::zeros(4), 1.0), ContractError);
  CHECK_THROWS_AS(eig(cand, train, -1.0), ContractError);
}

TEST_CASE("eig is monotone in candidate and train entries") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uni(0.0, 2.0);
  FisherDiagonal c{Vec<double>(10)}, tr{Vec<double>(10)};
  for (Index i = 0; i < 10; ++i) {
    c.values(i) = uni(rng);
    tr.values(i) = uni(rng);
  }
  const double base = eig(c, tr, 1e-6);
  for (Index i = 0; i < 10; ++i) {
    FisherDiagonal c2 = c, t2 = tr;
    c2.values(i) += 0.1;
    t2.values(i) += 0.1;
    CHECK(eig(c2, tr, 1e-6) > base);
    CHECK(eig(c, t2, 1e-6) <= base);
  }
}

TEST_CASE("accumulate_train is an entrywise sum") {
  FisherDiagonal a{Vec<double>::LinSpaced(5, 0.0, 4.0)}, b{Vec<double>::LinSpaced(5, 1.0, 2.0)};
  CHECK(accumulate_train(a, FisherDiagonal::zeros(5)).values == a.values);
  CHECK(accumulate_train(a, a).values == 2.0 * a.values);
  CHECK(accumulate_train(a, b).values == accumulate_train(b, a).values);
  CHECK_THROWS_AS(accumulate_train(a, FisherDiagonal::zeros(4)), ContractError);
}

TEST_CASE("Hutchinson on a diagonal quadratic converges to tr(H^2) = 14") {
  const Eigen::Vector3d d(1, 2, 3);
  auto hvp = [&](const Vec<double>& v) { return Vec<double>(d.cwiseProduct(v)); };
  const auto est = hutchinson_squared_norm(hvp, 3, 10000, 42);
  CHECK(std::abs(est.mean - 14.0) / 14.0 < 0.02);
  // Error shrinks roughly like 1/sqrt(n): average absolute error over seeds.
  auto mean_abs_err = [&](int n) {
    double acc = 0.0;
    for (std::uint64_t s = 0; s < 200; ++s) acc += std::abs(hutchinson_squared_norm(hvp, 3, n, 1000 + s).mean - 14.0);
    return acc / 200.0;
  };
  const double e16 = mean_abs_err(16), e256 = mean_abs_err(256);
  CHECK(e16 / e256 == doctest::Approx(4.0).epsilon(0.35));
}

TEST_CASE("Hutchinson on a 20-parameter MLP matches the dense finite-difference Hessian") {
  const testing::TinyMlpProblem prob(7);
  REQUIRE(prob.params.size() == 20);
  const RowMat<double> hess = prob.finite_difference_hessian();
  const double exact = hess.squaredNorm();
  auto hvp = [&](const Vec<double>& v) {
    return hessian_vector_product([&](const auto& p) { return prob.gradient(p); }, prob.params, v);
  };
  // the forward-over-reverse product agrees with the dense matrix
  Vec<double> e = Vec<double>::Zero(20);
  e(3) = 1.0;
  CHECK((hvp(e) - hess.col(3)).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, hess.cwiseAbs().maxCoeff()));
  const auto est = hutchinson_squared_norm(hvp, 20, 1000, 9);
  INFO("exact " << exact << " estimate " << est.mean);
  CHECK(std::abs(est.mean - exact) / exact < 0.05);
}

TEST_CASE("deformation loss gradient and Hessian-vector products match finite differences") {
  std::mt19937_64 rng(8);
  const CameraView cam = testing::front_camera(10, 4.0, 40.0);
  const GaussianSet scene = testing::random_scene(rng, 3, {.extent = 0.5, .feature_dim = 2});
  const DeformationNet net = testing::active_net(tiny_config(), 9, 0.2);
  const double t = 0.6;
  const Image target = testing::random_image(rng, 10, 10, 3, 0.0, 1.0);

  auto loss = [&](const Vec<double>& p) {
    DeformationNet n2 = net;
    n2.params = p;
    const Image c = render(deform(scene, n2, t), cam).color;
    double l = 0.0;
    for (std::size_t i = 0; i < c.data.size(); ++i) l += (c.data[i] - target.data[i]) * (c.data[i] - target.data[i]);
    return l;
  };
  const Vec<double> g = deformation_loss_gradient(scene, net, cam, t, target);
  Vec<double> num(g.size());
  for (Index i = 0; i < g.size(); ++i) num(i) = testing::central_difference(loss, net.params, i, 1e-6);
  CHECK(testing::compare_relative(g, num).max_rel < 1e-3);
  CHECK(deformation_score_grad(scene, net, cam, t, target).value == doctest::Approx(num.squaredNorm()).epsilon(1e-3));

  Vec<double> v(g.size());
  for (Index i = 0; i < v.size(); ++i) v(i) = std::sin(0.7 * double(i));
  const Vec<double> hv = deformation_hvp(scene, net, cam, t, target, v);
  const double h = 1e-5;
  DeformationNet np = net, nm = net;
  np.params += h * v;
  nm.params -= h * v;
  const Vec<double> fd = (deformation_loss_gradient(scene, np, cam, t, target) -
                          deformation_loss_gradient(scene, nm, cam, t, target)) /
                         (2.0 * h);
  CHECK(testing::compare_relative(hv, fd, 1e-4).max_rel < 1e-3);
}

TEST_CASE("deformation scores: zero residual, invisible scene, storage order") {
  std::mt19937_64 rng(10);
  const CameraView cam = testing::front_camera(10);
  const GaussianSet scene = testing::random_scene(rng, 5, {.feature_dim = 2});
  const DeformationNet net = testing::active_net(tiny_config(), 11, 0.2);
  const Image own = render(deform(scene, net, 0.5), cam).color;
  CHECK(deformation_score_grad(scene, net, cam, 0.5, own).value == 0.0);

  GaussianSet hidden = scene;
  hidden.positions.col(1).array() -= 10.0;
  const Image black(10, 10, 3);
  const auto hs = deformation_score_hutchinson(hidden, net, cam, 0.5, black, 3, 1);
  CHECK(hs.value == 0.0);
  CHECK(hs.probes == 3);

  const Image target = testing::random_image(rng, 10, 10, 3, 0.0, 1.0);
  const GaussianSet perm = scene.permuted({3, 0, 4, 2, 1});
  CHECK(deformation_score_grad(perm, net, cam, 0.5, target).value ==
        doctest::Approx(deformation_score_grad(scene, net, cam, 0.5, target).value).epsilon(1e-12));
  // own rendering as target still gives positive curvature
  CHECK(deformation_score_hutchinson(scene, net, cam, 0.5, own, 4, 2).value > 0.0);
}

TEST_CASE("heatmaps: uncovered pixels are zero and the total equals the Fisher trace") {
  std::mt19937_64 rng(12);
  const CameraView cam = testing::front_camera(10, 4.0, 40.0);
  GaussianSet scene = testing::random_scene(rng, 3, {.extent = 0.3, .log_scale_min = -2.2, .log_scale_max = -1.8, .feature_dim = 2});
  const Image heat = fisher_heatmap(scene, cam);
  const RenderOutput out = render(scene, cam);
  double total = 0.0;
  for (int p = 0; p < heat.pixels(); ++p) {
    if (out.contributions[std::size_t(p)].empty()) CHECK(heat.data[std::size_t(p)] == 0.0);
    total += heat.data[std::size_t(p)];
  }
  CHECK(total == doctest::Approx(fisher_diag(scene, cam, true).values.sum()).epsilon(1e-12));

  const DeformationNet net = testing::active_net(tiny_config(), 13, 0.2);
  const double t = 0.4;
  const Image dheat = fisher_heatmap(scene, cam, &net, t);
  const auto outputs = [&](const Vec<double>& p) {
    DeformationNet n2 = net;
    n2.params = p;
    return testing::stack_outputs(render(deform(scene, n2, t), cam), true);
  };
  const RowMat<double> jac = testing::finite_difference_jacobian(outputs, net.params, 1e-6);
  double dtotal = 0.0;
  for (double v : dheat.data) dtotal += v;
  CHECK(dtotal == doctest::Approx(jac.squaredNorm()).epsilon(1e-4));
}
