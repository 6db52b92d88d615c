// Atmosphere scattering model: I = J*t + A*(1-t) with t = exp(-beta * d).
// compose_haze and invert_asm are exact inverses wherever t stays above the
// clamp floor, which the round-trip tests pin down.
#pragma once

#include <cmath>
#include <string>

#include "hcd/common.hpp"
#include "hcd/image.hpp"
#include "hcd/rng.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct AsmParams {
  double atmosphere = 0.9;  // global atmospheric light A, in [0,1]
  double beta = 1.0;        // scattering coefficient, >= 0
  Tensor depth;             // (1,H,W), non-negative
};

inline Tensor transmission_from_depth(const Tensor& depth, double beta) {
  ensure_chw(depth, "transmission_from_depth");
  require(depth.channels() == 1, "transmission_from_depth: depth must be (1,H,W)");
  require(std::isfinite(beta) && beta >= 0.0, "transmission_from_depth: beta must be >= 0");
  Tensor t = depth;
  for (double& v : t.data) {
    require(std::isfinite(v) && v >= 0.0, "transmission_from_depth: depth must be non-negative");
    v = std::exp(-beta * v);
  }
  return t;
}

inline void check_asm_args(const Tensor& img, const Tensor& t, double a, const std::string& ctx) {
  ensure_chw(img, ctx);
  ensure_chw(t, ctx + " transmission");
  require(t.channels() == 1 || t.channels() == img.channels(),
          ctx + ": transmission must be (1,H,W) or match the image channels");
  require(t.height() == img.height() && t.width() == img.width(),
          ctx + ": transmission dims " + t.shape_str() + " do not match image " + img.shape_str());
  require(std::isfinite(a) && a >= 0.0 && a <= 1.0, ctx + ": atmosphere must be in [0,1]");
  ensure_finite(img, ctx);
  for (double v : t.data)
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ctx + ": transmission must be in [0,1]");
}

// I = J*t + A*(1-t); t broadcast over channels when single-channel.
inline Tensor compose_haze(const Tensor& clear, const Tensor& t, double atmosphere) {
  check_asm_args(clear, t, atmosphere, "compose_haze");
  Tensor out = clear;
  const int c = clear.channels(), h = clear.height(), w = clear.width();
  for (int ch = 0; ch < c; ++ch) {
    const int tch = (t.channels() == 1) ? 0 : ch;
    for (int y = 0; y < h; ++y) {
      const double* tr = t.row(tch, y);
      double* orow = out.row(ch, y);
      for (int x = 0; x < w; ++x) orow[x] = orow[x] * tr[x] + atmosphere * (1.0 - tr[x]);
    }
  }
  return out;
}

// J = (I - A) / max(t, t_min) + A. The clamp keeps the division stable where
// transmission collapses; above the floor this inverts compose_haze exactly.
inline Tensor invert_asm(const Tensor& hazy, const Tensor& t, double atmosphere,
                         double t_min = 1e-3) {
  check_asm_args(hazy, t, atmosphere, "invert_asm");
  require(t_min > 0.0, "invert_asm: t_min must be positive");
  Tensor out = hazy;
  const int c = hazy.channels(), h = hazy.height(), w = hazy.width();
  for (int ch = 0; ch < c; ++ch) {
    const int tch = (t.channels() == 1) ? 0 : ch;
    for (int y = 0; y < h; ++y) {
      const double* tr = t.row(tch, y);
      double* orow = out.row(ch, y);
      for (int x = 0; x < w; ++x) {
        double tv = tr[x] < t_min ? t_min : tr[x];
        orow[x] = (orow[x] - atmosphere) / tv + atmosphere;
      }
    }
  }
  return out;
}

enum class DepthMode { LinearRamp, Radial, PerlinLike };

inline DepthMode depth_mode_from_string(const std::string& s) {
  if (s == "linear-ramp") return DepthMode::LinearRamp;
  if (s == "radial") return DepthMode::Radial;
  if (s == "perlin-like") return DepthMode::PerlinLike;
  throw ConfigError("unknown depth mode: " + s +
                    " (expected linear-ramp, radial, or perlin-like)");
}

inline std::string to_string(DepthMode m) {
  switch (m) {
    case DepthMode::LinearRamp: return "linear-ramp";
    case DepthMode::Radial: return "radial";
    default: return "perlin-like";
  }
}

// Smooth value-noise field: coarse uniform grids resized up and blended.
inline Tensor perlin_like_field(int h, int w, Rng& rng) {
  auto octave = [&](int gh, int gw) {
    Tensor g = Tensor::chw(1, gh, gw);
    for (double& v : g.data) v = rng.uniform();
    return resize_bilinear(g, h, w);
  };
  Tensor coarse = octave(4, 4);
  Tensor fine = octave(9, 9);
  Tensor out = Tensor::chw(1, h, w);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = 0.65 * coarse.data[i] + 0.35 * fine.data[i];
  return out;
}

// Depth field in [0,1] (min 0, max 1 after normalization), shape (1,H,W).
inline Tensor make_depth(DepthMode mode, int h, int w, Rng& rng) {
  require(h >= 2 && w >= 2, "make_depth: dims must be >= 2");
  Tensor d = Tensor::chw(1, h, w);
  if (mode == DepthMode::LinearRamp) {
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    double cx = std::cos(theta), sy = std::sin(theta);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        d.at(0, y, x) = cx * (static_cast<double>(x) / (w - 1)) +
                        sy * (static_cast<double>(y) / (h - 1));
  } else if (mode == DepthMode::Radial) {
    double cy = rng.uniform(0.25, 0.75) * (h - 1);
    double cx = rng.uniform(0.25, 0.75) * (w - 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        d.at(0, y, x) = std::hypot(y - cy, x - cx);
  } else {
    d = perlin_like_field(h, w, rng);
  }
  double lo = d.min(), hi = d.max();
  double span = hi - lo;
  if (span < 1e-12) span = 1.0;
  for (double& v : d.data) v = (v - lo) / span;
  return d;
}

}  // namespace hcd
