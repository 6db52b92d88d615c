// Parameter-owning layer wrappers around the raw ops, plus Xavier-uniform
// initialization. Every parameter registers itself in a ParamSet under a
// stable dotted name; registration order is the serialization order and,
// because initialization draws from one shared stream, also part of the
// determinism contract.
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hcd/autograd.hpp"
#include "hcd/ops.hpp"
#include "hcd/rng.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct ParamSet {
  struct Item {
    std::string name;
    Var var;
  };
  std::vector<Item> items;

  Var add(const std::string& name, Tensor init) {
    for (const auto& it : items)
      require_internal(it.name != name, "duplicate parameter name: " + name);
    Var v = leaf(std::move(init));
    items.push_back({name, v});
    return v;
  }

  long long param_count() const {
    long long n = 0;
    for (const auto& it : items) n += it.var.val().numel();
    return n;
  }

  const Item* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return &it;
    return nullptr;
  }
};

// Xavier-uniform bound for a conv weight: sqrt(6 / (fan_in + fan_out)) with
// fan = channels * kernel_area.
inline double xavier_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline Tensor xavier_conv_weight(int co, int ci, int k, Rng& rng) {
  Tensor w({co, ci, k, k});
  const double bound = xavier_bound(ci * k * k, co * k * k);
  for (double& v : w.data) v = rng.uniform_sym(bound);
  return w;
}

struct Conv2dLayer {
  Var w, b;
  int stride = 1;
  Pad pad = Pad::Reflect;

  Conv2dLayer() = default;
  Conv2dLayer(ParamSet& ps, const std::string& name, int ci, int co, int k, int stride_,
              Pad pad_, Rng& rng, bool zero_init = false)
      : stride(stride_), pad(pad_) {
    Tensor wt = zero_init ? Tensor({co, ci, k, k}) : xavier_conv_weight(co, ci, k, rng);
    w = ps.add(name + ".w", std::move(wt));
    b = ps.add(name + ".b", Tensor({co}));
  }

  Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

// 4x4 stride-2 transposed conv (2x upsampler). Weight layout (Ci,Co,4,4).
struct ConvT2dLayer {
  Var w, b;

  ConvT2dLayer() = default;
  ConvT2dLayer(ParamSet& ps, const std::string& name, int ci, int co, Rng& rng) {
    Tensor wt({ci, co, 4, 4});
    const double bound = xavier_bound(ci * 16, co * 16);
    for (double& v : wt.data) v = rng.uniform_sym(bound);
    w = ps.add(name + ".w", std::move(wt));
    b = ps.add(name + ".b", Tensor({co}));
  }

  Var operator()(const Var& x) const { return conv_transpose2d(x, w, b); }
};

// Deformable 3x3 conv with its offset predictor. The predictor is zero
// initialized (weights and bias), so a freshly built layer starts out
// sampling the regular grid and behaves like its plain-conv counterpart.
struct DeformConv2dLayer {
  Conv2dLayer offset_pred;
  Var w, b;

  DeformConv2dLayer() = default;
  DeformConv2dLayer(ParamSet& ps, const std::string& name, int ci, int co, Rng& rng) {
    offset_pred = Conv2dLayer(ps, name + ".off", ci, 18, 3, 1, Pad::Reflect, rng,
                              /*zero_init=*/true);
    w = ps.add(name + ".w", xavier_conv_weight(co, ci, 3, rng));
    b = ps.add(name + ".b", Tensor({co}));
  }

  Var operator()(const Var& x) const { return deform_conv2d(x, w, b, offset_pred(x)); }
};

}  // namespace hcd
