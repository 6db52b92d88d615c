// JSON configuration: one schema with model/train/perceptual/synth/eval
// sections. User files and --set overrides are validated against the default
// schema (unknown keys and type mismatches are config errors), and every
// command echoes its fully resolved config into its output directory so runs
// are reproducible from the artifacts alone.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcd/common.hpp"
#include "hcd/dataset.hpp"
#include "hcd/network.hpp"

namespace hcd {

using json = nlohmann::json;

inline json default_config() {
  return json{
      {"model", model_config_to_json(ModelConfig{})},
      {"train",
       {{"crop", 240},
        {"batch", 16},
        {"lr_init", 2e-4},
        {"lr_final", 1e-6},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"adam_eps", 1e-8},
        {"total_steps", 1000},
        {"seed", 0},
        {"lambda", 0.1},
        {"epsilon", 1e-3},
        {"val_every", 50},
        {"val_count", 8},
        {"checkpoint_every", 0},
        {"grad_clip", 0.0},
        {"resume_from", ""}}},
      {"perceptual", {{"backend", "random-tiny"}, {"weights_path", ""}, {"seed", 7}}},
      {"synth",
       {{"n", 100},
        {"seed", 0},
        {"beta_min", 0.4},
        {"beta_max", 1.6},
        {"a_min", 0.7},
        {"a_max", 1.0},
        {"depth_mode", "mix"}}},
      {"eval", {{"mode", "rgb"}}},
  };
}

namespace detail {

inline void check_against_schema(const json& user, const json& schema, const std::string& path) {
  for (const auto& [key, val] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key: " + here);
    const json& ref = schema[key];
    if (ref.is_object()) {
      if (!val.is_object()) throw ConfigError("config key " + here + " must be an object");
      check_against_schema(val, ref, here);
    } else if (ref.is_boolean()) {
      if (!val.is_boolean()) throw ConfigError("config key " + here + " must be a boolean");
    } else if (ref.is_string()) {
      if (!val.is_string()) throw ConfigError("config key " + here + " must be a string");
    } else if (ref.is_number_integer()) {
      if (!val.is_number_integer())
        throw ConfigError("config key " + here + " must be an integer");
    } else if (ref.is_number()) {
      if (!val.is_number()) throw ConfigError("config key " + here + " must be a number");
    }
  }
}

inline void merge_patch(json& base, const json& patch) {
  for (const auto& [key, val] : patch.items()) {
    if (val.is_object() && base.contains(key) && base[key].is_object())
      merge_patch(base[key], val);
    else
      base[key] = val;
  }
}

}  // namespace detail

// Defaults, optionally overlaid with a config file, then with key=value
// overrides using dotted paths (e.g. "train.total_steps=1"). Values parse as
// JSON when possible and fall back to strings.
inline json resolve_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config file: " + config_path);
    json user;
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError("config file " + config_path + ": " + e.what());
    }
    detail::check_against_schema(user, cfg, "");
    detail::merge_patch(cfg, user);
  }
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override must look like section.key=value, got: " + ov);
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json val;
    try {
      val = json::parse(raw);
    } catch (const json::exception&) {
      val = raw;  // bare strings like depth_mode=radial
    }
    json patch;
    json* cur = &patch;
    size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
      auto dot = key.find('.', start);
      parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
      (*cur)[parts[i]] = json::object();
      cur = &(*cur)[parts[i]];
    }
    (*cur)[parts.back()] = val;
    detail::check_against_schema(patch, cfg, "");
    detail::merge_patch(cfg, patch);
  }
  return cfg;
}

// FNV-1a over the canonical dump; stable across runs and platforms.
inline std::string config_fingerprint(const json& cfg) {
  const std::string s = cfg.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void echo_effective_config(const json& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string path = out_dir + "/effective_config.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path);
  out << cfg.dump(2) << "\n";
}

inline SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  try {
    c.n = j.value("n", c.n);
    c.seed = j.value("seed", c.seed);
    c.beta_min = j.value("beta_min", c.beta_min);
    c.beta_max = j.value("beta_max", c.beta_max);
    c.a_min = j.value("a_min", c.a_min);
    c.a_max = j.value("a_max", c.a_max);
    c.depth_mode = j.value("depth_mode", c.depth_mode);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synth config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace hcd
