// Image geometry on (C,H,W) tensors: bilinear resize, area downsampling,
// target pyramids, crops, right-angle rotations, reflect padding.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "hcd/common.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

// Reflect-without-repeating-the-edge fold (OpenCV's BORDER_REFLECT_101):
// for size 4 the index pattern is ... 2 1 | 0 1 2 3 | 2 1 0 ...
// Accepts any integer, folds by the period 2*(size-1). Size 1 clamps to 0.
inline int reflect_index(int t, int size) {
  if (size == 1) return 0;
  const int p = 2 * (size - 1);
  int m = t % p;
  if (m < 0) m += p;
  return (m >= size) ? p - m : m;
}

// One output sample of a separable bilinear resize: v = a + t*(b - a) with
// a = src[lo], b = src[hi]. Half-pixel centers, edges clamped, so resizing to
// the same size reproduces the input bitwise (t is then exactly 0).
struct ResizeTap {
  int lo, hi;
  double t;
};

inline std::vector<ResizeTap> resize_taps(int in, int out) {
  require(in >= 1 && out >= 1, "resize: sizes must be >= 1");
  std::vector<ResizeTap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    double fl = std::floor(src);
    int lo = static_cast<int>(fl);
    if (lo > in - 1) lo = in - 1;
    int hi = lo + 1 > in - 1 ? in - 1 : lo + 1;
    double t = src - fl;
    if (hi == lo) t = 0.0;
    taps[static_cast<size_t>(o)] = {lo, hi, t};
  }
  return taps;
}

inline Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  ensure_chw(img, "resize_bilinear");
  ensure_finite(img, "resize_bilinear");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dims must be >= 1");
  const int c = img.channels(), h = img.height(), w = img.width();
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  Tensor out = Tensor::chw(c, out_h, out_w);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < out_h; ++oy) {
      const double* r0 = img.row(ch, ty[oy].lo);
      const double* r1 = img.row(ch, ty[oy].hi);
      const double fy = ty[oy].t;
      double* orow = out.row(ch, oy);
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& t = tx[ox];
        double a = r0[t.lo] + t.t * (r0[t.hi] - r0[t.lo]);
        double b = r1[t.lo] + t.t * (r1[t.hi] - r1[t.lo]);
        orow[ox] = a + fy * (b - a);
      }
    }
  }
  return out;
}

// 2x area downsample: plain mean of each 2x2 block. H and W must be even.
inline Tensor downsample2_area(const Tensor& img) {
  ensure_chw(img, "downsample2_area");
  require(img.height() % 2 == 0 && img.width() % 2 == 0,
          "downsample2_area: dims must be even, got " + img.shape_str());
  const int c = img.channels(), oh = img.height() / 2, ow = img.width() / 2;
  Tensor out = Tensor::chw(c, oh, ow);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      const double* r0 = img.row(ch, 2 * oy);
      const double* r1 = img.row(ch, 2 * oy + 1);
      double* orow = out.row(ch, oy);
      for (int ox = 0; ox < ow; ++ox)
        orow[ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * 0.25;
    }
  }
  return out;
}

// Ground-truth pyramid for the three output scales: level 0 is the input
// itself, levels 1 and 2 are successive 2x area downsamples. Area (not
// bilinear) so every level keeps the global mean of the original.
inline std::array<Tensor, 3> build_target_pyramid(const Tensor& img) {
  ensure_chw(img, "build_target_pyramid");
  ensure_finite(img, "build_target_pyramid");
  require(img.height() % 4 == 0 && img.width() % 4 == 0,
          "build_target_pyramid: H and W must be divisible by 4, got " + img.shape_str());
  std::array<Tensor, 3> p;
  p[0] = img;
  p[1] = downsample2_area(p[0]);
  p[2] = downsample2_area(p[1]);
  return p;
}

inline Tensor crop(const Tensor& img, int y0, int x0, int h, int w) {
  ensure_chw(img, "crop");
  require(h >= 1 && w >= 1, "crop: size must be >= 1");
  require(y0 >= 0 && x0 >= 0 && y0 + h <= img.height() && x0 + w <= img.width(),
          "crop: window out of bounds");
  const int c = img.channels();
  Tensor out = Tensor::chw(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const double* src = img.row(ch, y0 + y) + x0;
      double* dst = out.row(ch, y);
      for (int x = 0; x < w; ++x) dst[x] = src[x];
    }
  return out;
}

// Counter-clockwise rotation by q quarter turns; q=0 is the identity copy.
inline Tensor rot90(const Tensor& img, int q) {
  ensure_chw(img, "rot90");
  q = ((q % 4) + 4) % 4;
  const int c = img.channels(), h = img.height(), w = img.width();
  if (q == 0) return img;
  Tensor out = (q == 2) ? Tensor::chw(c, h, w) : Tensor::chw(c, w, h);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = img.at(ch, y, x);
        if (q == 1)
          out.at(ch, w - 1 - x, y) = v;
        else if (q == 2)
          out.at(ch, h - 1 - y, w - 1 - x) = v;
        else
          out.at(ch, x, h - 1 - y) = v;
      }
  return out;
}

// Reflect-101 padding; the fold handles pads larger than the image.
inline Tensor pad_reflect(const Tensor& img, int top, int bottom, int left, int right) {
  ensure_chw(img, "pad_reflect");
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad_reflect: negative pad");
  const int c = img.channels(), h = img.height(), w = img.width();
  Tensor out = Tensor::chw(c, h + top + bottom, w + left + right);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out.height(); ++y) {
      const double* src = img.row(ch, reflect_index(y - top, h));
      double* dst = out.row(ch, y);
      for (int x = 0; x < out.width(); ++x) dst[x] = src[reflect_index(x - left, w)];
    }
  return out;
}

inline Tensor clamp01(const Tensor& img) {
  Tensor out = img;
  for (double& v : out.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return out;
}

}  // namespace hcd
