// semantic.hpp
//
// Rendered low-dimensional features are lifted to the supervision space by a
// per-pixel affine decoder, then labelled by the nearest class embedding.

#pragma once

#include <cstdint>

#include "nbvsplat/common.hpp"

namespace nbv {

inline constexpr int kDefaultSupervisionDim = 16;

struct FeatureDecoder {
  RowMat<double> weights;  // D_f x D_t
  Vec<double> bias;        // D_t

  Index input_dim() const { return weights.rows(); }
  Index output_dim() const { return weights.cols(); }
  Index parameter_count() const { return weights.size() + bias.size(); }
  void validate() const;

  static FeatureDecoder identity(Index dim);
  // Seeded Gaussian init with standard deviation 1/sqrt(D_f), zero bias.
  static FeatureDecoder random(Index input_dim, Index output_dim, std::uint64_t seed);

  Vec<double> flat() const;
  void set_flat(const Vec<double>& params);
};

struct DecoderGradient {
  RowMat<double> weights;
  Vec<double> bias;
  Image features;  // adjoint with respect to the decoder input
};

/// Per-pixel affine map F' = F W + b.
template <typename T>
BasicImage<T> decode(const FeatureDecoder& dec, const BasicImage<T>& features) {
  NBV_REQUIRE(features.channels == dec.input_dim(), ContractError,
              "decoder expects " + std::to_string(dec.input_dim()) + " feature channels, got " +
                  std::to_string(features.channels));
  const int dout = int(dec.output_dim());
  BasicImage<T> out(features.height, features.width, dout);
  for (int p = 0; p < features.pixels(); ++p) {
    const T* in = features.pixel(p);
    T* o = out.pixel(p);
    for (int j = 0; j < dout; ++j) {
      T acc = T(dec.bias(j));
      for (int i = 0; i < features.channels; ++i) acc += in[i] * T(dec.weights(i, j));
      o[j] = acc;
    }
  }
  return out;
}

DecoderGradient decode_backward(const FeatureDecoder& dec, const Image& features, const Image& adjoint);

/// K unit-norm class vectors standing in for text embeddings.
struct ClassEmbedding {
  RowMat<double> rows;  // K x D_t

  Index classes() const { return rows.rows(); }
  Index dim() const { return rows.cols(); }
  void validate() const;
  static ClassEmbedding random(Index classes, Index dim, std::uint64_t seed);
};

/// Per-pixel argmax of dot products against the class embeddings; ties go to the lowest class.
LabelMap segment(const Image& decoded, const ClassEmbedding& classes);

struct SegmentationMetrics {
  double miou = 0.0;
  double macc = 0.0;
};

/// Ground-truth label for pixels that belong to no object (empty background).
/// Such pixels are skipped when scoring.
inline constexpr int kIgnoreLabel = 255;

/// Mean IoU and mean per-class accuracy over the classes present in `gt`,
/// skipping pixels labelled kIgnoreLabel.
SegmentationMetrics miou_macc(const LabelMap& pred, const LabelMap& gt, int classes);

}  // namespace nbv
