// Frozen perceptual embedding backends for the contrastive loss. All three
// expose the same contract: embed() maps an RGB image to a list of feature
// tensors with one blending coefficient per tap, gradients flow through the
// activations but never into the encoder weights.
//
//  - identity:    the image itself, coefficient 1 (cheap, exact oracles)
//  - random-tiny: three fixed-seed conv stages (fast, deterministic)
//  - vgg19:       the classic 19-layer stack up to its fifth block's first
//                 conv, tapping each block's first post-ReLU activation with
//                 coefficients 1/32..1; weights come from an archive on disk
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hcd/autograd.hpp"
#include "hcd/layers.hpp"
#include "hcd/ops.hpp"
#include "hcd/rng.hpp"
#include "hcd/serialize.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct PerceptualEncoder {
  enum class Backend { Identity, RandomTiny, Vgg19 };

  struct Stage {
    Var w, b;         // frozen (requires_grad stays false)
    int stride = 1;
    bool pool_before = false;
    bool tap_after = false;
  };

  Backend backend = Backend::Identity;
  std::vector<Stage> stages;
  std::vector<double> coeffs = {1.0};
  Tensor norm_scale, norm_shift;  // optional per-channel input normalization

  // Feature maps at each tap; input must be (3,H,W).
  std::vector<Var> embed(const Var& img) const {
    ensure_chw(img.val(), "perceptual embed");
    require(img.val().channels() == 3, "perceptual embed: expected 3 channels");
    if (backend == Backend::Identity) return {img};
    Var x = img;
    if (norm_scale.numel() == 3) x = scale_shift_channels(x, norm_scale, norm_shift);
    std::vector<Var> taps;
    for (const auto& st : stages) {
      if (st.pool_before) x = maxpool2(x);
      x = relu(conv2d(x, st.w, st.b, st.stride, Pad::Zero));
      if (st.tap_after) taps.push_back(x);
    }
    require_internal(taps.size() == coeffs.size(), "encoder tap/coefficient mismatch");
    return taps;
  }

  static PerceptualEncoder identity() { return PerceptualEncoder{}; }

  static PerceptualEncoder random_tiny(uint64_t seed) {
    PerceptualEncoder e;
    e.backend = Backend::RandomTiny;
    e.coeffs = {0.25, 0.5, 1.0};
    Rng rng = Rng::derive({seed, kStreamEncoder});
    const int chans[4] = {3, 8, 16, 16};
    const int strides[3] = {2, 2, 1};
    for (int i = 0; i < 3; ++i) {
      Stage st;
      Tensor w({chans[i + 1], chans[i], 3, 3});
      const double bound = xavier_bound(chans[i] * 9, chans[i + 1] * 9);
      for (double& v : w.data) v = rng.uniform_sym(bound);
      st.w = constant(std::move(w));
      st.b = constant(Tensor({chans[i + 1]}));
      st.stride = strides[i];
      st.tap_after = true;
      e.stages.push_back(std::move(st));
    }
    return e;
  }

  static PerceptualEncoder vgg19(const std::string& weights_path) {
    if (!std::filesystem::exists(weights_path))
      throw ConfigError("vgg19 weights file not found: " + weights_path +
                        " (set perceptual.weights_path to a valid archive)");
    ArrayArchive arc = load_archive(weights_path);
    PerceptualEncoder e;
    e.backend = Backend::Vgg19;
    e.coeffs = {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};
    e.norm_scale = Tensor({3});
    e.norm_shift = Tensor({3});
    const double mean[3] = {0.485, 0.456, 0.406};
    const double stdv[3] = {0.229, 0.224, 0.225};
    for (int c = 0; c < 3; ++c) {
      e.norm_scale.data[c] = 1.0 / stdv[c];
      e.norm_shift.data[c] = -mean[c] / stdv[c];
    }
    const auto plan = vgg19_plan();
    for (size_t i = 0; i < plan.size(); ++i) {
      const std::string nm = "conv" + std::to_string(i + 1);
      Tensor w = arc.at(nm + ".w");
      Tensor b = arc.at(nm + ".b");
      require(w.rank() == 4 && w.dim(0) == plan[i].out_ch && w.dim(1) == plan[i].in_ch &&
                  w.dim(2) == 3 && w.dim(3) == 3,
              "vgg19 weights: bad shape for " + nm + ".w in " + weights_path);
      require(b.rank() == 1 && b.dim(0) == plan[i].out_ch,
              "vgg19 weights: bad shape for " + nm + ".b in " + weights_path);
      Stage st;
      st.w = constant(std::move(w));
      st.b = constant(std::move(b));
      st.pool_before = plan[i].pool_before;
      st.tap_after = plan[i].tap_after;
      e.stages.push_back(std::move(st));
    }
    return e;
  }

  struct Vgg19Conv {
    int in_ch, out_ch;
    bool pool_before, tap_after;
  };

  // Convs 1..13 (through the first conv of block five); a tap sits on each
  // block's first post-ReLU activation.
  static std::vector<Vgg19Conv> vgg19_plan() {
    return {
        {3, 64, false, true},     // conv1
        {64, 64, false, false},   // conv2
        {64, 128, true, true},    // conv3
        {128, 128, false, false}, // conv4
        {128, 256, true, true},   // conv5
        {256, 256, false, false}, // conv6
        {256, 256, false, false}, // conv7
        {256, 256, false, false}, // conv8
        {256, 512, true, true},   // conv9
        {512, 512, false, false}, // conv10
        {512, 512, false, false}, // conv11
        {512, 512, false, false}, // conv12
        {512, 512, true, true},   // conv13
    };
  }
};

inline PerceptualEncoder::Backend perceptual_backend_from_string(const std::string& s) {
  if (s == "identity") return PerceptualEncoder::Backend::Identity;
  if (s == "random-tiny") return PerceptualEncoder::Backend::RandomTiny;
  if (s == "vgg19-pretrained") return PerceptualEncoder::Backend::Vgg19;
  throw ConfigError("unknown perceptual backend: " + s +
                    " (expected identity, random-tiny, or vgg19-pretrained)");
}

// Builds an encoder from a {"backend", "weights_path", "seed"} object.
inline PerceptualEncoder perceptual_encoder_from_config(const nlohmann::json& j) {
  std::string backend, weights_path;
  uint64_t seed = 7;
  try {
    backend = j.value("backend", std::string("random-tiny"));
    weights_path = j.value("weights_path", std::string());
    seed = j.value("seed", seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad perceptual config: ") + e.what());
  }
  switch (perceptual_backend_from_string(backend)) {
    case PerceptualEncoder::Backend::Identity:
      return PerceptualEncoder::identity();
    case PerceptualEncoder::Backend::RandomTiny:
      return PerceptualEncoder::random_tiny(seed);
    case PerceptualEncoder::Backend::Vgg19:
    default:
      return PerceptualEncoder::vgg19(weights_path);
  }
}

// Writes a weights archive with the correct vgg19 layout but seeded-random
// values. Keeps the full load path exercised where no pretrained file ships.
// Stand-in weights for tests. Biases are drawn away from zero and the weight
// scale is halved so pre-activations keep a margin from the relu kink; small
// input perturbations then stay inside one linear region per unit, which
// finite-difference probes of losses built on the embedding rely on.
inline void write_random_vgg19_weights(const std::string& path, uint64_t seed) {
  Rng rng = Rng::derive({seed, kStreamEncoder, 19});
  ArrayArchive arc;
  arc.meta = {{"format", "vgg19-weights"}, {"source", "random"}, {"seed", seed}};
  const auto plan = PerceptualEncoder::vgg19_plan();
  for (size_t i = 0; i < plan.size(); ++i) {
    Tensor w({plan[i].out_ch, plan[i].in_ch, 3, 3});
    const double bound = 0.35 * xavier_bound(plan[i].in_ch * 9, plan[i].out_ch * 9);
    for (double& v : w.data) v = rng.uniform_sym(bound);
    Tensor b({plan[i].out_ch});
    for (double& v : b.data) {
      const double m = rng.uniform(0.5, 1.5);
      v = rng.uniform(0.0, 1.0) < 0.5 ? -m : m;
    }
    const std::string nm = "conv" + std::to_string(i + 1);
    arc.arrays.emplace_back(nm + ".w", std::move(w));
    arc.arrays.emplace_back(nm + ".b", std::move(b));
  }
  save_archive(arc, path, /*pack_f32=*/true);
}

}  // namespace hcd
