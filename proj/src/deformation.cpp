#include "nbvsplat/deformation.hpp"

#include <random>

namespace nbv {

void DeformationConfig::validate() const {
  NBV_REQUIRE(grid_resolution >= 2, ContractError, "grid resolution must be at least 2");
  NBV_REQUIRE(grid_channels >= 1 && fusion_width >= 1 && fused_dim >= 1 && head_width >= 1, ContractError,
              "deformation network widths must be positive");
  for (int k = 0; k < 3; ++k)
    NBV_REQUIRE(bounds_min(k) < bounds_max(k), ContractError, "deformation bounds must satisfy min < max per axis");
}

DeformationNet::DeformationNet(const DeformationConfig& cfg) : config(cfg) {
  cfg.validate();
  fusion_ = MlpSpec::one_hidden(6 * cfg.grid_channels, cfg.fusion_width, cfg.fused_dim);
  heads_[0] = MlpSpec::one_hidden(cfg.fused_dim, cfg.head_width, 3);
  heads_[1] = MlpSpec::one_hidden(cfg.fused_dim, cfg.head_width, 4);
  heads_[2] = MlpSpec::one_hidden(cfg.fused_dim, cfg.head_width, 3);
  params = Vec<double>::Zero(parameter_count());
}

Index DeformationNet::plane_size() const {
  return Index(config.grid_resolution) * config.grid_resolution * config.grid_channels;
}

Index DeformationNet::parameter_count() const {
  Index n = grid_parameter_count() + fusion_.parameter_count();
  for (const auto& h : heads_) n += h.parameter_count();
  return n;
}

Index DeformationNet::grid_index(int plane, int col, int row, int channel) const {
  return plane * plane_size() + (Index(row) * config.grid_resolution + col) * config.grid_channels + channel;
}

Index DeformationNet::head_offset(Head h) const {
  Index off = fusion_offset() + fusion_.parameter_count();
  for (int k = 0; k < int(h); ++k) off += heads_[std::size_t(k)].parameter_count();
  return off;
}

std::pair<Index, Index> DeformationNet::head_output_layer(Head h) const {
  const MlpSpec& spec = head_spec(h);
  const Index end = head_offset(h) + spec.parameter_count();
  return {end - spec.layers.back().parameter_count(), end};
}

void DeformationNet::zero_heads() {
  for (Head h : {Head::Position, Head::Rotation, Head::LogScale}) {
    const auto [b, e] = head_output_layer(h);
    params.segment(b, e - b).setZero();
  }
}

bool DeformationNet::heads_are_zero() const {
  for (Head h : {Head::Position, Head::Rotation, Head::LogScale}) {
    const auto [b, e] = head_output_layer(h);
    if (params.segment(b, e - b).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

void DeformationNet::validate() const {
  config.validate();
  NBV_REQUIRE(params.size() == parameter_count(), ContractError, "deformation parameter vector has wrong length");
  NBV_REQUIRE(params.allFinite(), NumericError, "deformation parameters are not finite");
}

DeformationNet DeformationNet::create(const DeformationConfig& cfg, std::uint64_t seed) {
  DeformationNet net(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> grid(-cfg.grid_init_scale, cfg.grid_init_scale);
  for (Index i = 0; i < net.grid_parameter_count(); ++i) net.params(i) = grid(rng);

  auto init_mlp = [&](const MlpSpec& spec, Index offset) {
    for (const auto& layer : spec.layers) {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(layer.in)));
      for (Index k = 0; k < layer.in * layer.out; ++k) net.params(offset + k) = normal(rng);
      offset += layer.parameter_count();  // biases stay zero
    }
  };
  init_mlp(net.fusion_spec(), net.fusion_offset());
  for (Head h : {Head::Position, Head::Rotation, Head::LogScale}) init_mlp(net.head_spec(h), net.head_offset(h));
  net.zero_heads();
  return net;
}

std::vector<Eigen::Matrix<double, 10, 10>> deformation_geometry_jacobians(const GaussianSet& scene,
                                                                          const DeformationNet& net, double t) {
  using D = Dual<double>;
  scene.validate();
  const Vec<D> p = net.params.cast<D>();
  std::vector<Eigen::Matrix<double, 10, 10>> out(static_cast<std::size_t>(scene.size()));
  for (Index i = 0; i < scene.size(); ++i) {
    auto& jac = out[std::size_t(i)];
    for (int k = 0; k < 10; ++k) {
      Vec3T<D> x, s;
      Vec4T<D> q;
      for (int j = 0; j < 3; ++j) x(j) = D(scene.positions(i, j), k == j ? 1.0 : 0.0);
      for (int j = 0; j < 4; ++j) q(j) = D(scene.rotations(i, j), k == 3 + j ? 1.0 : 0.0);
      for (int j = 0; j < 3; ++j) s(j) = D(scene.log_scales(i, j), k == 7 + j ? 1.0 : 0.0);
      const auto d = deform_gaussian<D>(net, p.data(), x, q, s, t);
      for (int j = 0; j < 3; ++j) jac(j, k) = d.position(j).d;
      for (int j = 0; j < 4; ++j) jac(3 + j, k) = d.rotation(j).d;
      for (int j = 0; j < 3; ++j) jac(7 + j, k) = d.log_scale(j).d;
    }
  }
  return out;
}

}  // namespace nbv
