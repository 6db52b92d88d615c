// The three-scale dehazing network. A shallow extractor produces feature
// maps at full, half, and quarter resolution; a chain of identical
// interaction sub-modules exchanges information across the scales (bi-level
// fusion plus residual dense refinement, with a skip around each sub-module);
// a reconstruction head turns the three streams into dehazed images at each
// scale, coarse to fine, with optional global residuals from the input.
//
// The use_* flags carve out the ablation ladder: plain convs instead of
// deformable ones, sub-modules without the fusion block, and a loss-only
// contrastive flag that never changes the parameter count.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcd/autograd.hpp"
#include "hcd/image.hpp"
#include "hcd/layers.hpp"
#include "hcd/ops.hpp"
#include "hcd/rng.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct ModelConfig {
  int base_width = 32;      // channels of the full-resolution branch; doubles per scale
  int him_submodules = 3;   // interaction sub-modules chained in series
  int febs_per_branch = 1;  // refinement blocks per branch inside a sub-module
  int feb_layers = 6;       // dense layers inside one refinement block
  int feb_growth = 32;      // channels added by each dense layer
  bool use_dcn = true;      // deformable refinement in the extractor
  bool use_hfb = true;      // cross-scale fusion block inside sub-modules
  bool use_hcl = true;      // contrastive loss term (training only, no params)
  bool global_residual = true;  // add the downsampled input to each output head
  uint64_t rng_seed = 0;

  void validate() const {
    require_config(base_width >= 1 && base_width <= 512, "model.base_width out of range [1,512]");
    require_config(him_submodules >= 1 && him_submodules <= 16,
                   "model.him_submodules out of range [1,16]");
    require_config(febs_per_branch >= 1 && febs_per_branch <= 8,
                   "model.febs_per_branch out of range [1,8]");
    require_config(feb_layers >= 1 && feb_layers <= 16, "model.feb_layers out of range [1,16]");
    require_config(feb_growth >= 1 && feb_growth <= 256, "model.feb_growth out of range [1,256]");
  }

  int branch_width(int k) const { return base_width << k; }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"base_width", c.base_width},
                        {"him_submodules", c.him_submodules},
                        {"febs_per_branch", c.febs_per_branch},
                        {"feb_layers", c.feb_layers},
                        {"feb_growth", c.feb_growth},
                        {"use_dcn", c.use_dcn},
                        {"use_hfb", c.use_hfb},
                        {"use_hcl", c.use_hcl},
                        {"global_residual", c.global_residual},
                        {"rng_seed", c.rng_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.base_width = j.value("base_width", c.base_width);
    c.him_submodules = j.value("him_submodules", c.him_submodules);
    c.febs_per_branch = j.value("febs_per_branch", c.febs_per_branch);
    c.feb_layers = j.value("feb_layers", c.feb_layers);
    c.feb_growth = j.value("feb_growth", c.feb_growth);
    c.use_dcn = j.value("use_dcn", c.use_dcn);
    c.use_hfb = j.value("use_hfb", c.use_hfb);
    c.use_hcl = j.value("use_hcl", c.use_hcl);
    c.global_residual = j.value("global_residual", c.global_residual);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

// Cross-scale fusion block. Each step forms a residue between a branch and
// a rescaled neighbor, then folds the refined residue back with a skip, so
// zero weights make the whole block an exact identity on all three branches.
struct HfbBlock {
  Conv2dLayer c_f2, c_f1, c_f23, c_f31;      // 3x3 stride-2 down, channels double
  ConvT2dLayer t_f21, t_f11, t_f22, t_f3;    // 4x4 stride-2 up, channels halve

  HfbBlock() = default;
  HfbBlock(ParamSet& ps, const std::string& name, int c1, Rng& rng) {
    const int c2 = 2 * c1, c3 = 4 * c1;
    c_f2 = Conv2dLayer(ps, name + ".c_f2", c2, c3, 3, 2, Pad::Zero, rng);
    t_f21 = ConvT2dLayer(ps, name + ".t_f21", c3, c2, rng);
    c_f1 = Conv2dLayer(ps, name + ".c_f1", c1, c2, 3, 2, Pad::Zero, rng);
    t_f11 = ConvT2dLayer(ps, name + ".t_f11", c2, c1, rng);
    t_f22 = ConvT2dLayer(ps, name + ".t_f22", c2, c1, rng);
    c_f23 = Conv2dLayer(ps, name + ".c_f23", c1, c2, 3, 2, Pad::Zero, rng);
    t_f3 = ConvT2dLayer(ps, name + ".t_f3", c3, c2, rng);
    c_f31 = Conv2dLayer(ps, name + ".c_f31", c2, c3, 3, 2, Pad::Zero, rng);
  }
};

inline std::array<Var, 3> hfb_forward(const HfbBlock& blk, const std::array<Var, 3>& f) {
  const Var& f1 = f[0];
  const Var& f2 = f[1];
  const Var& f3 = f[2];
  Var f21 = sub(f3, blk.c_f2(relu(f2)));
  Var f22 = add(blk.t_f21(relu(f21)), f2);
  Var f11 = sub(f22, blk.c_f1(relu(f1)));
  Var f1p = add(blk.t_f11(relu(f11)), f1);
  Var f23 = sub(f1p, blk.t_f22(relu(f22)));
  Var f2p = add(blk.c_f23(relu(f23)), f22);
  Var f31 = sub(f2p, blk.t_f3(relu(f3)));
  Var f3p = add(blk.c_f31(relu(f31)), f3);
  return {f1p, f2p, f3p};
}

// Residual dense refinement block: each 3x3 layer sees everything produced
// so far, a 1x1 fuses the stack back to the branch width, and the input is
// added on top (zero weights give the identity).
struct FebBlock {
  std::vector<Conv2dLayer> dense;
  Conv2dLayer fuse;

  FebBlock() = default;
  FebBlock(ParamSet& ps, const std::string& name, int ch, int layers, int growth, Rng& rng) {
    for (int i = 0; i < layers; ++i)
      dense.emplace_back(ps, name + ".dense" + std::to_string(i), ch + i * growth, growth, 3, 1,
                         Pad::Reflect, rng);
    fuse = Conv2dLayer(ps, name + ".fuse", ch + layers * growth, ch, 1, 1, Pad::Zero, rng);
  }
};

inline Var feb_forward(const FebBlock& blk, const Var& x) {
  Var cat = x;
  for (const auto& layer : blk.dense) cat = concat_channels({cat, relu(layer(cat))});
  return add(blk.fuse(cat), x);
}

// Feature attention: a channel gate from global pooling, then a single-map
// pixel gate. Both squeeze by factor 8 (floored at 1). With zero weights the
// two sigmoids sit at 0.5 and the block scales its input by exactly 0.25.
struct FabBlock {
  Conv2dLayer ca0, ca1, pa0, pa1;

  FabBlock() = default;
  FabBlock(ParamSet& ps, const std::string& name, int ch, Rng& rng) {
    const int r = std::max(1, ch / 8);
    ca0 = Conv2dLayer(ps, name + ".ca0", ch, r, 1, 1, Pad::Zero, rng);
    ca1 = Conv2dLayer(ps, name + ".ca1", r, ch, 1, 1, Pad::Zero, rng);
    pa0 = Conv2dLayer(ps, name + ".pa0", ch, r, 1, 1, Pad::Zero, rng);
    pa1 = Conv2dLayer(ps, name + ".pa1", r, 1, 1, 1, Pad::Zero, rng);
  }
};

inline Var fab_forward(const FabBlock& blk, const Var& x) {
  Var cgate = sigmoid(blk.ca1(relu(blk.ca0(global_avg_pool(x)))));
  Var y = mul(x, cgate);
  Var pgate = sigmoid(blk.pa1(relu(blk.pa0(y))));
  return mul(y, pgate);
}

struct Hdn {
  ModelConfig cfg;
  ParamSet params;

  // Extractor: per branch a strided stem then a refinement conv (deformable
  // or plain). Branch k runs at 1/2^k resolution with base_width<<k channels.
  std::array<Conv2dLayer, 3> stem;
  std::array<Conv2dLayer, 3> refine_plain;
  std::array<DeformConv2dLayer, 3> refine_dcn;

  struct HimSub {
    HfbBlock hfb;
    std::array<std::vector<FebBlock>, 3> febs;
  };
  std::vector<HimSub> him;

  // Reconstruction: attention + 3x3 head per scale, coarse to fine, with the
  // upsampled attended features concatenated into the next finer scale.
  std::array<FabBlock, 3> fab;        // index k = scale k (0 finest)
  std::array<Conv2dLayer, 3> head;

  explicit Hdn(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    Rng rng = Rng::derive({cfg.rng_seed, kStreamInit});
    for (int k = 0; k < 3; ++k) {
      const int ch = cfg.branch_width(k);
      const int stride = 1 << k;
      stem[k] = Conv2dLayer(params, "hfe.b" + std::to_string(k) + ".stem", 3, ch, 3, stride,
                            stride == 1 ? Pad::Reflect : Pad::Zero, rng);
      if (cfg.use_dcn)
        refine_dcn[k] = DeformConv2dLayer(params, "hfe.b" + std::to_string(k) + ".refine", ch, ch, rng);
      else
        refine_plain[k] = Conv2dLayer(params, "hfe.b" + std::to_string(k) + ".refine", ch, ch, 3, 1,
                                      Pad::Reflect, rng);
    }
    him.resize(static_cast<size_t>(cfg.him_submodules));
    for (int s = 0; s < cfg.him_submodules; ++s) {
      const std::string base = "him" + std::to_string(s);
      if (cfg.use_hfb) him[s].hfb = HfbBlock(params, base + ".hfb", cfg.base_width, rng);
      for (int k = 0; k < 3; ++k)
        for (int f = 0; f < cfg.febs_per_branch; ++f)
          him[s].febs[k].emplace_back(params, base + ".b" + std::to_string(k) + ".feb" + std::to_string(f),
                                      cfg.branch_width(k), cfg.feb_layers, cfg.feb_growth, rng);
    }
    const int c1 = cfg.base_width;
    const std::array<int, 3> fab_ch = {7 * c1, 6 * c1, 4 * c1};
    for (int k = 2; k >= 0; --k) {
      fab[k] = FabBlock(params, "moirm.fab" + std::to_string(k + 1), fab_ch[k], rng);
      head[k] = Conv2dLayer(params, "moirm.head" + std::to_string(k + 1), fab_ch[k], 3, 3, 1,
                            Pad::Reflect, rng);
    }
  }

  long long param_count() const { return params.param_count(); }

  std::array<Var, 3> extract(const Var& img) const {
    std::array<Var, 3> out;
    for (int k = 0; k < 3; ++k) {
      Var s = stem[k](img);
      out[k] = cfg.use_dcn ? refine_dcn[k](s) : refine_plain[k](s);
    }
    return out;
  }

  std::array<Var, 3> interact(std::array<Var, 3> f) const {
    for (const auto& sub : him) {
      std::array<Var, 3> g = cfg.use_hfb ? hfb_forward(sub.hfb, f) : f;
      std::array<Var, 3> out;
      for (int k = 0; k < 3; ++k) {
        Var h = g[k];
        for (const auto& feb : sub.febs[k]) h = feb_forward(feb, h);
        out[k] = add(h, f[k]);
      }
      f = out;
    }
    return f;
  }

  std::array<Var, 3> reconstruct(const std::array<Var, 3>& f, const Var& img) const {
    std::array<Var, 3> a;
    Var f3 = fab_forward(fab[2], f[2]);
    a[2] = head[2](f3);
    Var up3 = resize_bilinear_ag(f3, f[1].val().height(), f[1].val().width());
    Var f2 = fab_forward(fab[1], concat_channels({up3, f[1]}));
    a[1] = head[1](f2);
    Var up2 = resize_bilinear_ag(f2, f[0].val().height(), f[0].val().width());
    Var f1 = fab_forward(fab[0], concat_channels({up2, f[0]}));
    a[0] = head[0](f1);
    if (cfg.global_residual) {
      auto pyr = build_target_pyramid(img.val());
      for (int k = 0; k < 3; ++k) a[k] = add(a[k], constant(pyr[k]));
    }
    return a;
  }

  std::array<Var, 3> forward(const Var& img) const {
    ensure_chw(img.val(), "hdn_forward");
    require(img.val().channels() == 3, "hdn_forward: expected 3 input channels");
    require(img.val().height() % 4 == 0 && img.val().width() % 4 == 0 &&
                img.val().height() >= 4 && img.val().width() >= 4,
            "hdn_forward: H and W must be positive multiples of 4, got " + img.val().shape_str());
    return reconstruct(interact(extract(img)), img);
  }

  std::array<Var, 3> forward(const Tensor& img) const { return forward(constant(img)); }
};

inline std::array<Var, 3> hfe_forward(const Hdn& m, const Var& img) { return m.extract(img); }
inline std::array<Var, 3> hdn_forward(const Hdn& m, const Var& img) { return m.forward(img); }
inline long long param_count(const Hdn& m) { return m.param_count(); }

}  // namespace hcd
