// Step-based cosine learning-rate schedule and Adam.
#pragma once

#include <cmath>
#include <vector>

#include "hcd/autograd.hpp"
#include "hcd/common.hpp"
#include "hcd/layers.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

// Cosine decay from lr_init at step 0 to lr_final at step total_steps:
//   lr(s) = lr_final + (lr_init - lr_final) * 0.5 * (1 + cos(pi * s / T))
// Endpoints and the midpoint land exactly on lr_init, lr_final, and their
// average (the cosine weight is exactly 1, 0, and 0.5 at those anchors).
inline double lr_at(long long step, double lr_init, double lr_final, long long total_steps) {
  require(total_steps >= 1, "lr_at: total_steps must be >= 1");
  require(step >= 0 && step <= total_steps, "lr_at: step out of [0, total_steps]");
  require(lr_init >= lr_final && lr_final >= 0.0, "lr_at: need lr_init >= lr_final >= 0");
  const double u = static_cast<double>(step) / static_cast<double>(total_steps);
  const double w = 0.5 * (1.0 + std::cos(M_PI * u));
  return lr_final + (lr_init - lr_final) * w;
}

// Adam with bias correction. Moment buffers are aligned with a ParamSet's
// registration order; that order is also how checkpoints serialize them.
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long t = 0;  // completed steps
  std::vector<Tensor> m, v;

  void init(const ParamSet& ps) {
    m.clear();
    v.clear();
    for (const auto& it : ps.items) {
      m.emplace_back(it.var.val().shape);
      v.emplace_back(it.var.val().shape);
    }
    t = 0;
  }

  // grads[i] aligns with ps.items[i]; empty tensors mean zero gradient.
  void step(ParamSet& ps, const std::vector<Tensor>& grads, double lr) {
    require_internal(m.size() == ps.items.size() && grads.size() == ps.items.size(),
                     "adam: buffer/parameter mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < ps.items.size(); ++i) {
      Tensor& p = ps.items[i].var.n->value;
      Tensor& mi = m[i];
      Tensor& vi = v[i];
      const bool has_g = grads[i].numel() == p.numel();
      for (size_t j = 0; j < p.data.size(); ++j) {
        const double g = has_g ? grads[i].data[j] : 0.0;
        mi.data[j] = beta1 * mi.data[j] + (1.0 - beta1) * g;
        vi.data[j] = beta2 * vi.data[j] + (1.0 - beta2) * g * g;
        const double mhat = mi.data[j] / bc1;
        const double vhat = vi.data[j] / bc2;
        p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

// Global L2-norm gradient clipping; max_norm <= 0 disables it.
inline void clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (double& v : g.data) v *= scale;
}

}  // namespace hcd
