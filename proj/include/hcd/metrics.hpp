// Image quality metrics. Both clamp their inputs to [0,1] first; a perfect
// match gives the 100 dB PSNR cap and an SSIM of exactly 1.0.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hcd/common.hpp"
#include "hcd/image.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

enum class PsnrMode { Rgb, YChannel };

inline PsnrMode psnr_mode_from_string(const std::string& s) {
  if (s == "rgb") return PsnrMode::Rgb;
  if (s == "y-channel") return PsnrMode::YChannel;
  throw ConfigError("unknown psnr mode: " + s + " (expected rgb or y-channel)");
}

namespace detail {

inline Tensor to_luma_bt601(const Tensor& img) {
  Tensor y = Tensor::chw(1, img.height(), img.width());
  const long long plane = static_cast<long long>(img.height()) * img.width();
  for (long long i = 0; i < plane; ++i)
    y.data[i] = 0.299 * img.data[i] + 0.587 * img.data[plane + i] + 0.114 * img.data[2 * plane + i];
  return y;
}

inline Tensor to_gray_mean(const Tensor& img) {
  const int c = img.channels();
  Tensor g = Tensor::chw(1, img.height(), img.width());
  const long long plane = static_cast<long long>(img.height()) * img.width();
  for (long long i = 0; i < plane; ++i) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += img.data[ch * plane + i];
    g.data[i] = s / c;
  }
  return g;
}

}  // namespace detail

// Peak signal-to-noise ratio against a peak of 1.0, capped at 100 dB.
// YChannel mode compares BT.601 luma instead of raw RGB planes.
inline double psnr(const Tensor& a, const Tensor& b, PsnrMode mode = PsnrMode::Rgb) {
  require(a.same_shape(b), "psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  ensure_chw(a, "psnr");
  Tensor x = clamp01(a), y = clamp01(b);
  if (mode == PsnrMode::YChannel) {
    require(a.channels() == 3, "psnr: y-channel mode needs 3-channel images");
    x = detail::to_luma_bt601(x);
    y = detail::to_luma_bt601(y);
  }
  double mse = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double d = x.data[i] - y.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.data.size());
  if (mse <= 0.0) return 100.0;
  const double v = 10.0 * std::log10(1.0 / mse);
  return v > 100.0 ? 100.0 : v;
}

// SSIM with the standard 11x11 Gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1. Channel-mean grayscale, mean over valid windows
// only (no padding), so images must be at least 11x11.
inline double ssim(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "ssim: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  ensure_chw(a, "ssim");
  require(a.height() >= 11 && a.width() >= 11,
          "ssim: images must be at least 11x11, got " + a.shape_str());

  const Tensor x = detail::to_gray_mean(clamp01(a));
  const Tensor y = detail::to_gray_mean(clamp01(b));
  const int h = x.height(), w = x.width();

  double kern[11];
  {
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      kern[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
      sum += kern[i];
    }
    for (double& v : kern) v /= sum;
  }

  // Separable valid-mode filtering of the five moment maps.
  const int vw = w - 10, vh = h - 10;
  auto filter = [&](auto&& value_at) {
    std::vector<double> horiz(static_cast<size_t>(h) * vw);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < vw; ++xx) {
        double s = 0.0;
        for (int k = 0; k < 11; ++k) s += kern[k] * value_at(yy, xx + k);
        horiz[static_cast<size_t>(yy) * vw + xx] = s;
      }
    std::vector<double> out(static_cast<size_t>(vh) * vw);
    for (int yy = 0; yy < vh; ++yy)
      for (int xx = 0; xx < vw; ++xx) {
        double s = 0.0;
        for (int k = 0; k < 11; ++k) s += kern[k] * horiz[static_cast<size_t>(yy + k) * vw + xx];
        out[static_cast<size_t>(yy) * vw + xx] = s;
      }
    return out;
  };

  const double* xd = x.data.data();
  const double* yd = y.data.data();
  auto X = [&](int yy, int xx) { return xd[static_cast<size_t>(yy) * w + xx]; };
  auto Y = [&](int yy, int xx) { return yd[static_cast<size_t>(yy) * w + xx]; };
  auto mu_x = filter(X);
  auto mu_y = filter(Y);
  auto xx2 = filter([&](int yy, int xx) { return X(yy, xx) * X(yy, xx); });
  auto yy2 = filter([&](int yy, int xx) { return Y(yy, xx) * Y(yy, xx); });
  auto xy = filter([&](int yy, int xx) { return X(yy, xx) * Y(yy, xx); });

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double sx = xx2[i] - mx * mx;
    const double sy = yy2[i] - my * my;
    const double sxy = xy[i] - mx * my;
    const double num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
    const double den = (mx * mx + my * my + c1) * (sx + sy + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mu_x.size());
}

}  // namespace hcd
