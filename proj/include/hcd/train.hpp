// Training loop: deterministic batching and augmentation, per-sample tapes
// with gradient accumulation, Adam with cosine decay, metrics CSV, and
// checkpoint save/load with exact resume.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcd/autograd.hpp"
#include "hcd/common.hpp"
#include "hcd/config.hpp"
#include "hcd/dataset.hpp"
#include "hcd/evaluate.hpp"
#include "hcd/image.hpp"
#include "hcd/losses.hpp"
#include "hcd/metrics.hpp"
#include "hcd/network.hpp"
#include "hcd/optim.hpp"
#include "hcd/perceptual.hpp"
#include "hcd/rng.hpp"
#include "hcd/serialize.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct TrainConfig {
  int crop = 240;
  int batch = 16;
  double lr_init = 2e-4;
  double lr_final = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  long long total_steps = 1000;
  uint64_t seed = 0;
  double lambda = 0.1;
  double epsilon = 1e-3;
  long long val_every = 50;
  int val_count = 8;
  long long checkpoint_every = 0;
  double grad_clip = 0.0;
  std::string resume_from;

  void validate() const {
    require_config(crop >= 4 && crop % 4 == 0, "train.crop must be a positive multiple of 4");
    require_config(batch >= 1, "train.batch must be >= 1");
    require_config(lr_init >= lr_final && lr_final >= 0.0,
                   "train.lr_init >= train.lr_final >= 0 required");
    require_config(total_steps >= 0, "train.total_steps must be >= 0");
    require_config(val_every >= 0, "train.val_every must be >= 0");
    require_config(val_count >= 0, "train.val_count must be >= 0");
    require_config(checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
    require_config(lambda >= 0.0, "train.lambda must be >= 0");
    require_config(epsilon > 0.0, "train.epsilon must be > 0");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.crop = j.value("crop", c.crop);
    c.batch = j.value("batch", c.batch);
    c.lr_init = j.value("lr_init", c.lr_init);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.seed = j.value("seed", c.seed);
    c.lambda = j.value("lambda", c.lambda);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.val_every = j.value("val_every", c.val_every);
    c.val_count = j.value("val_count", c.val_count);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.resume_from = j.value("resume_from", c.resume_from);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

// One metrics row; a training row fills lr/char/hcl/total, a validation row
// fills val_psnr, everything else stays blank in the CSV.
struct MetricsRow {
  long long step = 0;
  bool is_val = false;
  double lr = 0.0;
  double char_term = 0.0;
  double hcl_term = 0.0;
  double total = 0.0;
  double val_psnr = 0.0;
  double wall_ms = 0.0;

  std::string to_csv() const {
    char buf[256];
    if (is_val)
      std::snprintf(buf, sizeof(buf), "%lld,,,,,%.6f,%.3f", step, val_psnr, wall_ms);
    else
      std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,,%.3f", step, lr, char_term,
                    hcl_term, total, wall_ms);
    return buf;
  }
};

struct TrainState {
  Hdn model;
  Adam opt;
  long long step = 0;
  std::vector<MetricsRow> history;

  explicit TrainState(const ModelConfig& mc) : model(mc) { opt.init(model.params); }
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;
};

// ---- augmentation ----

struct AugmentResult {
  HazePairRecord record;
  int off_y = 0;
  int off_x = 0;
  int rot = 0;  // quarter turns
};

// Same crop window and rotation on both images. Draw order is pinned:
// off_y, then off_x, then rot. Inputs smaller than the crop are
// reflect-padded on the bottom/right first.
inline AugmentResult augment_pair(const HazePairRecord& rec, int crop_size, Rng& rng) {
  require(crop_size >= 1, "augment_pair: crop_size must be >= 1");
  require(rec.hazy.same_shape(rec.clear), "augment_pair: pair shape mismatch");
  Tensor hazy = rec.hazy, clear = rec.clear;
  const int h = hazy.height(), w = hazy.width();
  const int pad_b = std::max(0, crop_size - h), pad_r = std::max(0, crop_size - w);
  if (pad_b || pad_r) {
    hazy = pad_reflect(hazy, 0, pad_b, 0, pad_r);
    clear = pad_reflect(clear, 0, pad_b, 0, pad_r);
  }
  AugmentResult out;
  out.off_y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hazy.height() - crop_size + 1)));
  out.off_x = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hazy.width() - crop_size + 1)));
  out.rot = static_cast<int>(rng.uniform_int(4));
  out.record.name = rec.name;
  out.record.hazy = rot90(crop(hazy, out.off_y, out.off_x, crop_size, crop_size), out.rot);
  out.record.clear = rot90(crop(clear, out.off_y, out.off_x, crop_size, crop_size), out.rot);
  return out;
}

// ---- one optimizer step ----

// Per-sample forward/backward with gradients accumulated across the batch and
// scaled by 1/B, then a single Adam update at the cosine-decayed rate for the
// current step. Returns the batch-mean loss breakdown.
inline LossBreakdown train_step(TrainState& state, const std::vector<HazePairRecord>& batch,
                                const PerceptualEncoder& enc, const TrainConfig& tc) {
  require(!batch.empty(), "train_step: empty batch");
  require(state.step < tc.total_steps, "train_step: step out of schedule range");
  const double lr = lr_at(state.step, tc.lr_init, tc.lr_final, tc.total_steps);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  auto& items = state.model.params.items;
  std::vector<Tensor> grads(items.size());
  LossBreakdown mean{};
  LossOptions lo;
  lo.lambda = tc.lambda;
  lo.epsilon = tc.epsilon;
  lo.use_hcl = state.model.cfg.use_hcl;

  for (const auto& rec : batch) {
    auto outputs = state.model.forward(rec.hazy);
    auto targets = build_target_pyramid(rec.clear);
    auto negatives = build_target_pyramid(rec.hazy);
    auto [loss, bd] = total_loss(outputs, targets, negatives, enc, lo);
    if (!std::isfinite(bd.total))
      throw InternalError("non-finite loss at step " + std::to_string(state.step) + " on sample '" +
                          rec.name + "'");
    mean.char_term += bd.char_term * inv_b;
    mean.hcl_term += bd.hcl_term * inv_b;
    mean.total += bd.total * inv_b;
    GradMap gm = backward(loss);
    for (size_t i = 0; i < items.size(); ++i) {
      const Tensor* g = gm.find(items[i].var.n.get());
      if (!g) continue;
      if (grads[i].numel() == 0) grads[i] = Tensor(g->shape, 0.0);
      for (size_t k = 0; k < g->data.size(); ++k) grads[i].data[k] += g->data[k];
    }
  }
  for (auto& g : grads)
    for (double& v : g.data) v *= inv_b;
  for (const auto& g : grads)
    if (g.numel() && !g.all_finite())
      throw InternalError("non-finite gradient at step " + std::to_string(state.step));

  clip_grad_norm(grads, tc.grad_clip);
  state.opt.step(state.model.params, grads, lr);
  for (const auto& item : items)
    if (!item.var.val().all_finite())
      throw InternalError("non-finite weight '" + item.name + "' after step " +
                          std::to_string(state.step));

  mean.lambda = lo.lambda;
  mean.epsilon = lo.epsilon;
  state.step += 1;
  return mean;
}

// ---- checkpoints ----

namespace detail {
inline nlohmann::json history_to_json(const std::vector<MetricsRow>& hist) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : hist)
    out.push_back({r.step, r.is_val ? 1 : 0, r.lr, r.char_term, r.hcl_term, r.total, r.val_psnr,
                   r.wall_ms});
  return out;
}

inline std::vector<MetricsRow> history_from_json(const nlohmann::json& j) {
  std::vector<MetricsRow> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 8) throw IntegrityError("checkpoint: bad history row");
    MetricsRow r;
    r.step = e[0].get<long long>();
    r.is_val = e[1].get<int>() != 0;
    r.lr = e[2].get<double>();
    r.char_term = e[3].get<double>();
    r.hcl_term = e[4].get<double>();
    r.total = e[5].get<double>();
    r.val_psnr = e[6].get<double>();
    r.wall_ms = e[7].get<double>();
    out.push_back(r);
  }
  return out;
}
}  // namespace detail

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  ArrayArchive a;
  a.meta = {{"format", "hcd-checkpoint"},
            {"version", 1},
            {"step", state.step},
            {"adam_t", state.opt.t},
            {"adam", {{"beta1", state.opt.beta1}, {"beta2", state.opt.beta2}, {"eps", state.opt.eps}}},
            {"model", model_config_to_json(state.model.cfg)},
            {"history", detail::history_to_json(state.history)}};
  const auto& items = state.model.params.items;
  require_internal(state.opt.m.size() == items.size() && state.opt.v.size() == items.size(),
                   "save_checkpoint: optimizer not initialized for this model");
  for (size_t i = 0; i < items.size(); ++i)
    a.arrays.emplace_back("param/" + items[i].name, items[i].var.val());
  for (size_t i = 0; i < items.size(); ++i)
    a.arrays.emplace_back("adam_m/" + items[i].name, state.opt.m[i]);
  for (size_t i = 0; i < items.size(); ++i)
    a.arrays.emplace_back("adam_v/" + items[i].name, state.opt.v[i]);
  save_archive(a, path);
}

inline TrainState load_checkpoint(const std::string& path) {
  ArrayArchive a = load_archive(path);
  try {
    if (a.meta.value("format", "") != "hcd-checkpoint")
      throw FormatError("not a checkpoint archive: " + path);
    if (a.meta.value("version", 0) != 1)
      throw FormatError("unsupported checkpoint version in " + path);
    ModelConfig mc = model_config_from_json(a.meta.at("model"));
    TrainState state(mc);
    state.step = a.meta.at("step").get<long long>();
    state.opt.t = a.meta.at("adam_t").get<long long>();
    const auto& ad = a.meta.at("adam");
    state.opt.beta1 = ad.at("beta1").get<double>();
    state.opt.beta2 = ad.at("beta2").get<double>();
    state.opt.eps = ad.at("eps").get<double>();
    state.history = detail::history_from_json(a.meta.value("history", nlohmann::json::array()));
    auto& items = state.model.params.items;
    for (size_t i = 0; i < items.size(); ++i) {
      const Tensor& w = a.at("param/" + items[i].name);
      if (!w.same_shape(items[i].var.val()))
        throw IntegrityError("checkpoint: shape mismatch for '" + items[i].name + "'");
      items[i].var.n->value = w;
      const Tensor& m = a.at("adam_m/" + items[i].name);
      const Tensor& v = a.at("adam_v/" + items[i].name);
      if (!m.same_shape(w) || !v.same_shape(w))
        throw IntegrityError("checkpoint: moment shape mismatch for '" + items[i].name + "'");
      state.opt.m[i] = m;
      state.opt.v[i] = v;
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint meta corrupt: ") + e.what());
  }
}

// ---- full run ----

// Trains from a resolved config against data_root, writing metrics.csv,
// periodic checkpoints, and checkpoint_final.ckpt into out_dir. Resume
// restores weights, moments, step, and history from train.resume_from; the
// schedule always comes from the current config.
inline TrainState run_training(const nlohmann::json& cfg, const std::string& data_root,
                               const std::string& out_dir, std::ostream* log = nullptr) {
  ModelConfig mc = model_config_from_json(cfg.at("model"));
  TrainConfig tc = train_config_from_json(cfg.at("train"));
  std::filesystem::create_directories(out_dir);
  echo_effective_config(cfg, out_dir);

  PairListing listing = list_pairs(data_root);
  const int n = static_cast<int>(listing.pairs.size());
  const int val_n = std::min(tc.val_count, std::max(0, n - 1));
  const int train_n = n - val_n;
  if (tc.total_steps > 0)
    require(train_n >= 1, "training needs at least one pair in " + data_root);

  std::vector<HazePairRecord> train_set, val_set;
  for (int i = 0; i < train_n; ++i) train_set.push_back(load_pair(listing.pairs[i]));
  for (int i = train_n; i < n; ++i) val_set.push_back(load_pair(listing.pairs[i]));

  TrainState state = tc.resume_from.empty() ? TrainState(mc) : load_checkpoint(tc.resume_from);
  if (!tc.resume_from.empty()) {
    if (model_config_to_json(state.model.cfg) != model_config_to_json(mc))
      throw ConfigError("checkpoint model config differs from requested model config");
  }
  state.opt.beta1 = tc.beta1;
  state.opt.beta2 = tc.beta2;
  state.opt.eps = tc.adam_eps;
  require(state.step <= tc.total_steps,
          "resume step exceeds train.total_steps; raise total_steps to continue");

  PerceptualEncoder enc = PerceptualEncoder::identity();
  if (mc.use_hcl && state.step < tc.total_steps)
    enc = perceptual_encoder_from_config(cfg.at("perceptual"));

  std::ofstream csv(out_dir + "/metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write: " + out_dir + "/metrics.csv");
  csv << kMetricsHeader << "\n";
  for (const auto& r : state.history) csv << r.to_csv() << "\n";
  csv.flush();

  auto run_validation = [&]() {
    auto t0 = std::chrono::steady_clock::now();
    double acc = 0.0;
    for (const auto& rec : val_set)
      acc += psnr(clamp01(dehaze_image(state.model, rec.hazy)), rec.clear, PsnrMode::Rgb);
    MetricsRow row;
    row.step = state.step;
    row.is_val = true;
    row.val_psnr = acc / static_cast<double>(val_set.size());
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    state.history.push_back(row);
    csv << row.to_csv() << "\n";
    csv.flush();
    if (log) *log << "step " << row.step << " val_psnr " << row.val_psnr << "\n";
  };

  while (state.step < tc.total_steps) {
    const long long s = state.step;
    auto t0 = std::chrono::steady_clock::now();
    Rng batch_rng = Rng::derive({tc.seed, kStreamBatch, static_cast<uint64_t>(s)});
    std::vector<HazePairRecord> batch;
    for (int b = 0; b < tc.batch; ++b) {
      const auto& rec = train_set[batch_rng.uniform_int(static_cast<uint64_t>(train_n))];
      Rng aug_rng = Rng::derive(
          {tc.seed, kStreamAugment, static_cast<uint64_t>(s), static_cast<uint64_t>(b)});
      batch.push_back(augment_pair(rec, tc.crop, aug_rng).record);
    }
    const double lr = lr_at(s, tc.lr_init, tc.lr_final, tc.total_steps);
    LossBreakdown bd = train_step(state, batch, enc, tc);

    MetricsRow row;
    row.step = s;
    row.lr = lr;
    row.char_term = bd.char_term;
    row.hcl_term = bd.hcl_term;
    row.total = bd.total;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    state.history.push_back(row);
    csv << row.to_csv() << "\n";
    csv.flush();
    if (log && (state.step % 10 == 0 || state.step == tc.total_steps))
      *log << "step " << state.step << "/" << tc.total_steps << " total " << bd.total << "\n";

    if (tc.val_every > 0 && state.step % tc.val_every == 0 && !val_set.empty()) run_validation();
    if (tc.checkpoint_every > 0 && state.step % tc.checkpoint_every == 0)
      save_checkpoint(state, out_dir + "/checkpoint_step" + std::to_string(state.step) + ".ckpt");
  }
  save_checkpoint(state, out_dir + "/checkpoint_final.ckpt");
  return state;
}

}  // namespace hcd
