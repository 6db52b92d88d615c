// Dataset layout and synthetic haze generation.
//
// A dataset root holds hazy/<name>.png and clear/<name>.png; names pair the
// two sides. synth_dataset builds such a root from a directory of clear
// images: per pair it samples a scattering coefficient, an atmospheric
// light, and a procedural depth field, composes the hazy image, and records
// {name, beta, A, depth_mode, seed} as one JSON line in manifest.jsonl so any
// pair can be regenerated exactly.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcd/asm_model.hpp"
#include "hcd/common.hpp"
#include "hcd/image_io.hpp"
#include "hcd/rng.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct HazePairRecord {
  std::string name;
  Tensor hazy;
  Tensor clear;
};

struct PairPaths {
  std::string name;
  std::string hazy_path;
  std::string clear_path;
};

struct PairListing {
  std::vector<PairPaths> pairs;      // sorted by name
  std::vector<std::string> unpaired; // names present on only one side, sorted
};

namespace detail {

inline std::vector<std::string> png_stems(const std::string& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".png") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

inline PairListing list_pairs(const std::string& root) {
  const std::string hazy_dir = root + "/hazy";
  const std::string clear_dir = root + "/clear";
  if (!std::filesystem::is_directory(hazy_dir) || !std::filesystem::is_directory(clear_dir))
    throw ConfigError("dataset root must contain hazy/ and clear/ directories: " + root);
  auto h = detail::png_stems(hazy_dir);
  auto c = detail::png_stems(clear_dir);
  std::set<std::string> hs(h.begin(), h.end()), cs(c.begin(), c.end());
  PairListing out;
  for (const auto& n : h) {
    if (cs.count(n))
      out.pairs.push_back({n, hazy_dir + "/" + n + ".png", clear_dir + "/" + n + ".png"});
    else
      out.unpaired.push_back(n);
  }
  for (const auto& n : c)
    if (!hs.count(n)) out.unpaired.push_back(n);
  std::sort(out.unpaired.begin(), out.unpaired.end());
  return out;
}

inline HazePairRecord load_pair(const PairPaths& p) {
  HazePairRecord r;
  r.name = p.name;
  r.hazy = load_image(p.hazy_path);
  r.clear = load_image(p.clear_path);
  require(r.hazy.same_shape(r.clear),
          "pair " + p.name + ": hazy " + r.hazy.shape_str() + " and clear " +
              r.clear.shape_str() + " dims differ");
  return r;
}

struct SynthConfig {
  int n = 100;
  uint64_t seed = 0;
  double beta_min = 0.4, beta_max = 1.6;
  double a_min = 0.7, a_max = 1.0;
  std::string depth_mode = "mix";  // one of the three modes, or "mix" to cycle

  void validate() const {
    require_config(n >= 0, "synth.n must be >= 0");
    require_config(beta_min >= 0.0 && beta_min <= beta_max, "synth: need 0 <= beta_min <= beta_max");
    require_config(a_min >= 0.0 && a_min <= a_max && a_max <= 1.0,
                   "synth: need 0 <= a_min <= a_max <= 1");
    if (depth_mode != "mix") depth_mode_from_string(depth_mode);
  }
};

// Builds a dataset root under out_root and returns the manifest path.
inline std::string synth_dataset(const std::string& clear_dir, const std::string& out_root,
                                 const SynthConfig& cfg) {
  cfg.validate();
  std::vector<std::string> sources;
  if (std::filesystem::is_directory(clear_dir))
    for (const auto& e : std::filesystem::directory_iterator(clear_dir))
      if (e.is_regular_file() && e.path().extension() == ".png")
        sources.push_back(e.path().string());
  std::sort(sources.begin(), sources.end());
  if (cfg.n > 0 && sources.empty())
    throw ConfigError("no .png source images found in: " + clear_dir);

  std::filesystem::create_directories(out_root);
  const std::string manifest_path = out_root + "/manifest.jsonl";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest: " + manifest_path);

  static const char* kModes[3] = {"linear-ramp", "radial", "perlin-like"};
  for (int i = 0; i < cfg.n; ++i) {
    // One derived seed per pair; recorded so the pair is regenerable from its
    // manifest row plus the source image.
    Rng ix = Rng::derive({cfg.seed, kStreamSynth, static_cast<uint64_t>(i)});
    const uint64_t pair_seed = ix.u64();
    Rng rng = Rng::derive({pair_seed, kStreamSynth});

    const std::string mode_name =
        (cfg.depth_mode == "mix") ? kModes[i % 3] : cfg.depth_mode;
    const double beta = rng.uniform(cfg.beta_min, cfg.beta_max);
    const double a = rng.uniform(cfg.a_min, cfg.a_max);

    const Tensor clear = load_image(sources[static_cast<size_t>(i) % sources.size()]);
    Tensor depth = make_depth(depth_mode_from_string(mode_name), clear.height(), clear.width(), rng);
    Tensor t = transmission_from_depth(depth, beta);
    Tensor hazy = compose_haze(clear, t, a);

    char name[32];
    std::snprintf(name, sizeof(name), "pair_%05d", i);
    save_image(clear, out_root + "/clear/" + name + ".png");
    save_image(hazy, out_root + "/hazy/" + name + ".png");

    nlohmann::json rec = {{"name", name},
                          {"beta", beta},
                          {"A", a},
                          {"depth_mode", mode_name},
                          {"seed", pair_seed}};
    manifest << rec.dump() << "\n";
  }
  manifest.flush();
  if (!manifest) throw IoError("write failed: " + manifest_path);
  return manifest_path;
}

}  // namespace hcd
