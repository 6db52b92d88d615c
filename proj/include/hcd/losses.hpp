// Training losses. The reconstruction term is a per-pixel Charbonnier mean
// averaged over the three scales. The contrastive term resizes every output,
// positive (clear), and negative (hazy) image to the middle scale, embeds
// each exactly once with a frozen perceptual encoder, and for each output
// couples the summed distances to the positives with the summed reciprocal
// distances to the negatives:
//
//   L = sum_i [ sum_j d(A_i, P_j) ] * [ sum_k 1 / max(d(A_i, N_k), delta) ]
//
// where d(X,Y) is the coefficient-weighted sum over encoder taps of the mean
// absolute feature difference. delta = 1e-7 guards the reciprocal.
#pragma once

#include <array>
#include <vector>

#include "hcd/autograd.hpp"
#include "hcd/ops.hpp"
#include "hcd/perceptual.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

constexpr double kHclDenomFloor = 1e-7;

struct LossOptions {
  double lambda = 0.1;    // weight of the contrastive term
  double epsilon = 1e-3;  // Charbonnier knee
  bool use_hcl = true;
};

struct LossBreakdown {
  double char_term = 0.0;
  double hcl_term = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double epsilon = 0.0;
};

// Mean Charbonnier over the three scales: at outputs == targets this is
// exactly epsilon, and for residuals far above epsilon it approaches L1.
inline Var charbonnier_loss(const std::array<Var, 3>& outputs,
                            const std::array<Tensor, 3>& targets, double epsilon) {
  std::vector<Var> terms;
  for (int k = 0; k < 3; ++k) terms.push_back(charbonnier_mean(outputs[k], targets[k], epsilon));
  return s_scale(s_sum(terms), 1.0 / 3.0);
}

inline std::vector<Var> perceptual_embed(const PerceptualEncoder& enc, const Var& img) {
  return enc.embed(img);
}

// Coefficient-weighted feature distance between two embeddings.
inline Var embed_distance(const PerceptualEncoder& enc, const std::vector<Var>& a,
                          const std::vector<Var>& b) {
  require_internal(a.size() == b.size() && a.size() == enc.coeffs.size(),
                   "embed_distance: tap count mismatch");
  std::vector<Var> terms;
  for (size_t l = 0; l < a.size(); ++l)
    terms.push_back(s_scale(mean_abs_diff(a[l], b[l]), enc.coeffs[l]));
  return s_sum(terms);
}

// Core contrastive loss over arbitrary collections, all images resized to
// (mid_h, mid_w) and embedded once each. Works against any model that can
// produce output images; nothing here knows about the dehazing network.
inline Var hcl_loss_core(const std::vector<Var>& outputs, const std::vector<Var>& positives,
                         const std::vector<Var>& negatives, const PerceptualEncoder& enc,
                         int mid_h, int mid_w, double denom_floor = kHclDenomFloor) {
  require(!outputs.empty() && !positives.empty() && !negatives.empty(),
          "hcl_loss: outputs, positives, and negatives must be non-empty");
  auto embed_all = [&](const std::vector<Var>& imgs) {
    std::vector<std::vector<Var>> feats;
    feats.reserve(imgs.size());
    for (const auto& im : imgs) {
      Var r = (im.val().height() == mid_h && im.val().width() == mid_w)
                  ? im
                  : resize_bilinear_ag(im, mid_h, mid_w);
      feats.push_back(enc.embed(r));
    }
    return feats;
  };
  auto fa = embed_all(outputs);
  auto fp = embed_all(positives);
  auto fn = embed_all(negatives);

  std::vector<Var> per_output;
  for (size_t i = 0; i < fa.size(); ++i) {
    std::vector<Var> pos_terms, neg_terms;
    for (size_t j = 0; j < fp.size(); ++j) pos_terms.push_back(embed_distance(enc, fa[i], fp[j]));
    for (size_t k = 0; k < fn.size(); ++k)
      neg_terms.push_back(s_inv_clamped(embed_distance(enc, fa[i], fn[k]), denom_floor));
    per_output.push_back(s_mul(s_sum(pos_terms), s_sum(neg_terms)));
  }
  return s_sum(per_output);
}

// Three-scale wrapper: positives are the clear-image pyramid, negatives the
// hazy-input pyramid, and the common embedding size is the middle scale.
inline Var hcl_loss(const std::array<Var, 3>& outputs, const std::array<Tensor, 3>& positives,
                    const std::array<Tensor, 3>& negatives, const PerceptualEncoder& enc) {
  const int mid_h = outputs[1].val().height();
  const int mid_w = outputs[1].val().width();
  std::vector<Var> a(outputs.begin(), outputs.end());
  std::vector<Var> p, n;
  for (const auto& t : positives) p.push_back(constant(t));
  for (const auto& t : negatives) n.push_back(constant(t));
  return hcl_loss_core(a, p, n, enc, mid_h, mid_w);
}

// total = charbonnier + lambda * hcl (hcl dropped entirely when disabled).
inline std::pair<Var, LossBreakdown> total_loss(const std::array<Var, 3>& outputs,
                                                const std::array<Tensor, 3>& targets,
                                                const std::array<Tensor, 3>& negatives,
                                                const PerceptualEncoder& enc,
                                                const LossOptions& opt) {
  LossBreakdown bd;
  bd.lambda = opt.lambda;
  bd.epsilon = opt.epsilon;
  Var cb = charbonnier_loss(outputs, targets, opt.epsilon);
  bd.char_term = scalar_value(cb);
  Var total = cb;
  if (opt.use_hcl) {
    Var hc = hcl_loss(outputs, targets, negatives, enc);
    bd.hcl_term = scalar_value(hc);
    total = s_add(cb, s_scale(hc, opt.lambda));
  }
  bd.total = scalar_value(total);
  return {total, bd};
}

}  // namespace hcd
