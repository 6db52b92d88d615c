// Dense row-major double tensor. Rank 3 (C,H,W) carries images and feature
// maps; rank 4 (Co,Ci,Kh,Kw) carries conv weights; rank 1 carries biases and
// scalars. Double precision everywhere so finite-difference checks and
// bitwise-determinism contracts are not at the mercy of float rounding.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hcd/common.hpp"

namespace hcd {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    long long n = 1;
    for (int d : shape) {
      require(d >= 0, "tensor dims must be non-negative");
      n *= d;
    }
    data.assign(static_cast<size_t>(n), fill);
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static Tensor chw(int c, int h, int w, double fill = 0.0) {
    return Tensor({c, h, w}, fill);
  }

  int rank() const { return static_cast<int>(shape.size()); }

  long long numel() const { return static_cast<long long>(data.size()); }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // Rank-3 accessors.
  int channels() const { return shape[0]; }
  int height() const { return shape[1]; }
  int width() const { return shape[2]; }

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double* row(int c, int y) {
    return data.data() + (static_cast<size_t>(c) * shape[1] + y) * shape[2];
  }
  const double* row(int c, int y) const {
    return data.data() + (static_cast<size_t>(c) * shape[1] + y) * shape[2];
  }

  // Rank-4 accessor (weights).
  double& at4(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  double at4(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double min() const { return *std::min_element(data.begin(), data.end()); }
  double max() const { return *std::max_element(data.begin(), data.end()); }

  double mean() const {
    require(!data.empty(), "mean of empty tensor");
    double s = 0.0;
    for (double v : data) s += v;
    return s / static_cast<double>(data.size());
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

inline void ensure_finite(const Tensor& t, const std::string& ctx) {
  if (!t.all_finite()) throw InvalidArgument(ctx + ": non-finite values");
}

inline void ensure_chw(const Tensor& t, const std::string& ctx) {
  require(t.rank() == 3 && t.dim(0) >= 1 && t.dim(1) >= 1 && t.dim(2) >= 1,
          ctx + ": expected non-empty (C,H,W) tensor, got " + t.shape_str());
}

// Largest absolute elementwise difference; shapes must match.
inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace hcd
