#include "nbvsplat/metrics.hpp"

#include <array>
#include <cmath>

namespace nbv {
namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> gaussian_taps() {
  std::array<double, 2 * kRadius + 1> w{};
  double sum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    w[std::size_t(i + kRadius)] = std::exp(-double(i * i) / (2.0 * kSigma * kSigma));
    sum += w[std::size_t(i + kRadius)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable Gaussian filter of one h x w plane with zero padding. The kernel is
// symmetric, so this operator is its own adjoint.
std::vector<double> blur(const std::vector<double>& in, int h, int w) {
  static const auto taps = gaussian_taps();
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const int cc = c + k;
        if (cc >= 0 && cc < w) acc += taps[std::size_t(k + kRadius)] * in[std::size_t(r * w + cc)];
      }
      tmp[std::size_t(r * w + c)] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const int rr = r + k;
        if (rr >= 0 && rr < h) acc += taps[std::size_t(k + kRadius)] * tmp[std::size_t(rr * w + c)];
      }
      out[std::size_t(r * w + c)] = acc;
    }
  return out;
}

void require_same(const Image& a, const Image& b, const char* what) {
  NBV_REQUIRE(a.same_shape(b), ContractError,
              std::string(what) + ": shapes differ (" + shape_string(a.height, a.width, a.channels) + " vs " +
                  shape_string(b.height, b.width, b.channels) + ")");
  NBV_REQUIRE(!a.empty(), ContractError, std::string(what) + ": empty image");
}

}  // namespace

ImageLoss mean_abs_error(const Image& a, const Image& b, bool with_gradient) {
  require_same(a, b, "mean_abs_error");
  const double n = double(a.data.size());
  ImageLoss out;
  if (with_gradient) out.gradient = Image(a.height, a.width, a.channels);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    out.value += std::abs(d);
    if (with_gradient) out.gradient.data[i] = d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0);
  }
  out.value /= n;
  return out;
}

ImageLoss ssim(const Image& a, const Image& b, bool with_gradient) {
  require_same(a, b, "ssim");
  const int h = a.height, w = a.width, nch = a.channels;
  const std::size_t np = std::size_t(h) * std::size_t(w);
  const double norm = 1.0 / double(np * std::size_t(nch));
  ImageLoss out;
  if (with_gradient) out.gradient = Image(h, w, nch);

  std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
  for (int ch = 0; ch < nch; ++ch) {
    for (std::size_t p = 0; p < np; ++p) {
      x[p] = a.data[p * std::size_t(nch) + std::size_t(ch)];
      y[p] = b.data[p * std::size_t(nch) + std::size_t(ch)];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = blur(x, h, w), my = blur(y, h, w);
    const auto exx = blur(xx, h, w), eyy = blur(yy, h, w), exy = blur(xy, h, w);

    std::vector<double> g_mx, g_exx, g_exy;
    if (with_gradient) {
      g_mx.assign(np, 0.0);
      g_exx.assign(np, 0.0);
      g_exy.assign(np, 0.0);
    }
    for (std::size_t p = 0; p < np; ++p) {
      const double vxx = exx[p] - mx[p] * mx[p];
      const double vyy = eyy[p] - my[p] * my[p];
      const double vxy = exy[p] - mx[p] * my[p];
      const double a1 = 2.0 * mx[p] * my[p] + kC1, a2 = 2.0 * vxy + kC2;
      const double b1 = mx[p] * mx[p] + my[p] * my[p] + kC1, b2 = vxx + vyy + kC2;
      const double s = a1 * a2 / (b1 * b2);
      out.value += s;
      if (!with_gradient) continue;
      const double ds_dvxy = 2.0 * a1 / (b1 * b2);
      const double ds_dvxx = -s / b2;
      const double ds_dmx = 2.0 * my[p] * a2 / (b1 * b2) - 2.0 * mx[p] * s / b1;
      g_mx[p] = norm * (ds_dmx - 2.0 * mx[p] * ds_dvxx - my[p] * ds_dvxy);
      g_exx[p] = norm * ds_dvxx;
      g_exy[p] = norm * ds_dvxy;
    }
    if (with_gradient) {
      const auto bm = blur(g_mx, h, w), bxx = blur(g_exx, h, w), bxy = blur(g_exy, h, w);
      for (std::size_t p = 0; p < np; ++p)
        out.gradient.data[p * std::size_t(nch) + std::size_t(ch)] = bm[p] + 2.0 * x[p] * bxx[p] + y[p] * bxy[p];
    }
  }
  out.value *= norm;
  return out;
}

double mse(const Image& a, const Image& b) {
  require_same(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return acc / double(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

}  // namespace nbv
