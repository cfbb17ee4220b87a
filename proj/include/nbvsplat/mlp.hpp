// mlp.hpp
//
// Small dense networks over a flat parameter array, with an explicit tape for
// reverse mode. Templated on the scalar so dual numbers flow through.

#pragma once

#include <vector>

#include "nbvsplat/common.hpp"

namespace nbv {

enum class Activation { Identity, Tanh };

struct DenseLayerSpec {
  Index in = 0;
  Index out = 0;
  Activation activation = Activation::Identity;
  Index parameter_count() const { return in * out + out; }
};

// Parameters of layer l: weights (out x in, row-major) followed by bias (out).
struct MlpSpec {
  std::vector<DenseLayerSpec> layers;

  // in -> hidden (tanh) -> out
  static MlpSpec one_hidden(Index in, Index hidden, Index out) {
    return {{{in, hidden, Activation::Tanh}, {hidden, out, Activation::Identity}}};
  }
  Index input_dim() const { return layers.front().in; }
  Index output_dim() const { return layers.back().out; }
  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }
};

template <typename T>
struct MlpTape {
  std::vector<Vec<T>> inputs;  // input of each layer
  std::vector<Vec<T>> outputs;  // post-activation output of each layer
};

template <typename T>
Vec<T> mlp_forward(const MlpSpec& spec, const T* params, const Vec<T>& x, MlpTape<T>* tape = nullptr) {
  using std::tanh;
  NBV_REQUIRE(x.size() == spec.input_dim(), ContractError, "MLP input has wrong size");
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  Vec<T> h = x;
  const T* p = params;
  for (const auto& layer : spec.layers) {
    if (tape) tape->inputs.push_back(h);
    Vec<T> y(layer.out);
    const T* w = p;
    const T* b = p + layer.in * layer.out;
    for (Index o = 0; o < layer.out; ++o) {
      T acc = b[o];
      const T* wr = w + o * layer.in;
      for (Index i = 0; i < layer.in; ++i) acc += wr[i] * h(i);
      y(o) = layer.activation == Activation::Tanh ? T(tanh(acc)) : acc;
    }
    if (tape) tape->outputs.push_back(y);
    h = std::move(y);
    p += layer.parameter_count();
  }
  return h;
}

/// Accumulates d(loss)/d(params) into grad_params and returns d(loss)/d(input).
template <typename T>
Vec<T> mlp_backward(const MlpSpec& spec, const T* params, const MlpTape<T>& tape, const Vec<T>& grad_out,
                    T* grad_params) {
  std::vector<Index> offsets(spec.layers.size());
  Index off = 0;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    offsets[l] = off;
    off += spec.layers[l].parameter_count();
  }
  Vec<T> g = grad_out;
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    const auto& layer = spec.layers[l];
    const Vec<T>& in = tape.inputs[l];
    const Vec<T>& out = tape.outputs[l];
    if (layer.activation == Activation::Tanh)
      for (Index o = 0; o < layer.out; ++o) g(o) = g(o) * (T(1) - out(o) * out(o));
    const T* w = params + offsets[l];
    T* gw = grad_params + offsets[l];
    T* gb = gw + layer.in * layer.out;
    Vec<T> gin = Vec<T>::Zero(layer.in);
    for (Index o = 0; o < layer.out; ++o) {
      const T go = g(o);
      gb[o] += go;
      const T* wr = w + o * layer.in;
      T* gwr = gw + o * layer.in;
      for (Index i = 0; i < layer.in; ++i) {
        gwr[i] += go * in(i);
        gin(i) += go * wr[i];
      }
    }
    g = std::move(gin);
  }
  return g;
}

}  // namespace nbv
