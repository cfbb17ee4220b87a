// metrics.hpp
//
// Image comparison: mean absolute error, SSIM (11x11 Gaussian window, sigma 1.5,
// zero-padded "same" filtering, L = 1) and PSNR. The loss terms also return
// their gradient with respect to the first image.

#pragma once

#include "nbvsplat/common.hpp"

namespace nbv {

inline constexpr double kPsnrCap = 99.0;

struct ImageLoss {
  double value = 0.0;
  Image gradient;  // with respect to the first argument; empty unless requested
};

/// mean |a - b| over all pixels and channels
ImageLoss mean_abs_error(const Image& a, const Image& b, bool with_gradient = false);

/// Mean SSIM over pixels and channels.
ImageLoss ssim(const Image& a, const Image& b, bool with_gradient = false);

double mse(const Image& a, const Image& b);

/// 10 log10(1 / MSE), capped at kPsnrCap for identical images.
double psnr(const Image& a, const Image& b);

}  // namespace nbv
