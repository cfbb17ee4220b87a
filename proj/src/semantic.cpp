#include "nbvsplat/semantic.hpp"

#include <cmath>
#include <random>

namespace nbv {

void FeatureDecoder::validate() const {
  NBV_REQUIRE(bias.size() == weights.cols(), ContractError, "decoder bias length must equal output dim");
  NBV_REQUIRE(weights.allFinite() && bias.allFinite(), NumericError, "decoder has non-finite entries");
}

FeatureDecoder FeatureDecoder::identity(Index dim) {
  FeatureDecoder dec;
  dec.weights = RowMat<double>::Identity(dim, dim);
  dec.bias = Vec<double>::Zero(dim);
  return dec;
}

FeatureDecoder FeatureDecoder::random(Index input_dim, Index output_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(input_dim)));
  FeatureDecoder dec;
  dec.weights.resize(input_dim, output_dim);
  for (Index i = 0; i < dec.weights.size(); ++i) dec.weights.data()[i] = normal(rng);
  dec.bias = Vec<double>::Zero(output_dim);
  return dec;
}

Vec<double> FeatureDecoder::flat() const {
  Vec<double> out(parameter_count());
  std::copy_n(weights.data(), weights.size(), out.data());
  std::copy_n(bias.data(), bias.size(), out.data() + weights.size());
  return out;
}

void FeatureDecoder::set_flat(const Vec<double>& params) {
  NBV_REQUIRE(params.size() == parameter_count(), ContractError, "decoder parameter vector has wrong length");
  std::copy_n(params.data(), weights.size(), weights.data());
  std::copy_n(params.data() + weights.size(), bias.size(), bias.data());
}

DecoderGradient decode_backward(const FeatureDecoder& dec, const Image& features, const Image& adjoint) {
  NBV_REQUIRE(features.channels == dec.input_dim(), ContractError, "decoder input has wrong channel count");
  NBV_REQUIRE(adjoint.height == features.height && adjoint.width == features.width &&
                  adjoint.channels == dec.output_dim(),
              ContractError, "decoder adjoint has wrong shape");
  const int din = int(dec.input_dim());
  const int dout = int(dec.output_dim());
  DecoderGradient g;
  g.weights = RowMat<double>::Zero(din, dout);
  g.bias = Vec<double>::Zero(dout);
  g.features = Image(features.height, features.width, din);
  for (int p = 0; p < features.pixels(); ++p) {
    const double* in = features.pixel(p);
    const double* adj = adjoint.pixel(p);
    double* gf = g.features.pixel(p);
    for (int j = 0; j < dout; ++j) {
      if (adj[j] == 0.0) continue;
      g.bias(j) += adj[j];
      for (int i = 0; i < din; ++i) {
        g.weights(i, j) += in[i] * adj[j];
        gf[i] += dec.weights(i, j) * adj[j];
      }
    }
  }
  return g;
}

void ClassEmbedding::validate() const {
  NBV_REQUIRE(classes() >= 1, ContractError, "class embedding needs at least one class");
  for (Index k = 0; k < classes(); ++k)
    NBV_REQUIRE(std::abs(rows.row(k).norm() - 1.0) < 1e-9, ContractError, "class embeddings must be unit norm");
}

ClassEmbedding ClassEmbedding::random(Index classes, Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ClassEmbedding emb;
  emb.rows.resize(classes, dim);
  for (Index k = 0; k < classes; ++k) {
    for (Index j = 0; j < dim; ++j) emb.rows(k, j) = normal(rng);
    emb.rows.row(k).normalize();
  }
  return emb;
}

LabelMap segment(const Image& decoded, const ClassEmbedding& classes) {
  NBV_REQUIRE(decoded.channels == classes.dim(), ContractError, "feature dim does not match class embedding dim");
  LabelMap labels(decoded.height, decoded.width, 1);
  const int dim = decoded.channels;
  for (int p = 0; p < decoded.pixels(); ++p) {
    const double* f = decoded.pixel(p);
    int best = 0;
    double best_score = -INFINITY;
    for (Index k = 0; k < classes.classes(); ++k) {
      double s = 0.0;
      for (int j = 0; j < dim; ++j) s += f[j] * classes.rows(k, j);
      if (s > best_score) {
        best_score = s;
        best = int(k);
      }
    }
    labels.data[std::size_t(p)] = best;
  }
  return labels;
}

SegmentationMetrics miou_macc(const LabelMap& pred, const LabelMap& gt, int classes) {
  NBV_REQUIRE(pred.same_shape(gt), ContractError, "prediction and ground-truth label maps differ in shape");
  std::vector<long> inter(std::size_t(classes), 0), pred_count(std::size_t(classes), 0),
      gt_count(std::size_t(classes), 0);
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const int g = gt.data[i], p = pred.data[i];
    if (g == kIgnoreLabel) continue;
    NBV_REQUIRE(g >= 0 && g < classes && p >= 0 && p < classes, ContractError, "label out of range");
    ++gt_count[std::size_t(g)];
    ++pred_count[std::size_t(p)];
    if (g == p) ++inter[std::size_t(g)];
  }
  SegmentationMetrics m;
  int present = 0;
  for (int k = 0; k < classes; ++k) {
    const auto kk = std::size_t(k);
    if (gt_count[kk] == 0) continue;
    ++present;
    const long uni = gt_count[kk] + pred_count[kk] - inter[kk];
    m.miou += double(inter[kk]) / double(uni);
    m.macc += double(inter[kk]) / double(gt_count[kk]);
  }
  if (present > 0) {
    m.miou /= present;
    m.macc /= present;
  }
  return m;
}

}  // namespace nbv
