// common.hpp

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nbvsplat/dual.hpp"

namespace nbv {

using Index = Eigen::Index;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using Vec2T = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Vec4T = Eigen::Matrix<T, 4, 1>;
template <typename T>
using Mat2T = Eigen::Matrix<T, 2, 2>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

// Error kinds. Everything derives from Error so callers can isolate failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Input violates an operation's preconditions (shape, layout, empty pool, ...).
struct ContractError : Error {
  using Error::Error;
};
// Geometrically meaningless input (e.g. zero-norm quaternion).
struct DegenerateInputError : Error {
  using Error::Error;
};
// Non-finite intermediate or result.
struct NumericError : Error {
  using Error::Error;
};
// EIG evaluated without regularization against an unobserved parameter.
struct DivisionGuardError : Error {
  using Error::Error;
};
// Invalid scene / experiment specification.
struct SpecError : Error {
  using Error::Error;
};
// Training loss blew past the divergence guard.
struct DivergenceError : Error {
  using Error::Error;
};

#define NBV_REQUIRE(cond, ErrorType, msg)  \
  do {                                     \
    if (!(cond)) throw ErrorType(msg);     \
  } while (0)

// Dense H x W x C image, row-major with interleaved channels.
template <typename T>
struct BasicImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  BasicImage() = default;
  BasicImage(int h, int w, int c, T fill = T(0))
      : height(h), width(w), channels(c), data(std::size_t(h) * w * c, fill) {}

  T& at(int row, int col, int ch) { return data[(std::size_t(row) * width + col) * channels + ch]; }
  const T& at(int row, int col, int ch) const {
    return data[(std::size_t(row) * width + col) * channels + ch];
  }
  T* pixel(int p) { return data.data() + std::size_t(p) * channels; }
  const T* pixel(int p) const { return data.data() + std::size_t(p) * channels; }
  int pixels() const { return height * width; }
  bool empty() const { return data.empty(); }
  bool same_shape(const BasicImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  template <typename U>
  BasicImage<U> cast() const {
    BasicImage<U> out(height, width, channels);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};
using Image = BasicImage<double>;
using LabelMap = BasicImage<int>;

inline std::string shape_string(int h, int w, int c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

}  // namespace nbv
