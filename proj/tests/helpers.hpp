// Shared test utilities: temp dirs, random tensors, and a central-difference
// gradient checker used by the op and network tests.
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hcd/autograd.hpp"
#include "hcd/rng.hpp"
#include "hcd/tensor.hpp"

namespace tst {

inline std::filesystem::path tmp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("hcd_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline hcd::Tensor rand_chw(int c, int h, int w, hcd::Rng& rng, double lo = 0.0, double hi = 1.0) {
  hcd::Tensor t = hcd::Tensor::chw(c, h, w);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline hcd::Tensor rand_tensor(const std::vector<int>& shape, hcd::Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
  hcd::Tensor t(shape);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Central-difference check of d(scalar)/d(leaf) for every listed leaf.
// `f` must rebuild the graph from the leaves' current values on each call.
// Checks at most `max_checks` coordinates per leaf (all when it fits).
struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
};

inline GradCheck grad_check(const std::function<hcd::Var()>& f, std::vector<hcd::Var> leaves,
                            double h = 1e-4, int max_checks = 256, uint64_t pick_seed = 42) {
  hcd::GradMap gm = hcd::backward(f());
  GradCheck out;
  hcd::Rng pick(pick_seed);
  for (auto& leaf : leaves) {
    const hcd::Tensor* ga = gm.find(leaf.n.get());
    hcd::Tensor analytic = ga ? *ga : hcd::Tensor(leaf.val().shape, 0.0);
    const size_t n = leaf.val().numel();
    for (int c = 0; c < max_checks && static_cast<size_t>(c) < n; ++c) {
      const size_t k = (n <= static_cast<size_t>(max_checks))
                           ? static_cast<size_t>(c)
                           : static_cast<size_t>(pick.uniform_int(n));
      double& slot = leaf.n->value.data[k];
      const double keep = slot;
      slot = keep + h;
      const double up = hcd::scalar_value(f());
      slot = keep - h;
      const double dn = hcd::scalar_value(f());
      slot = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic.data[k];
      const double abs_err = std::abs(an - fd);
      const double rel = abs_err / std::max({std::abs(an), std::abs(fd), 1e-3});
      out.max_abs = std::max(out.max_abs, abs_err);
      out.max_rel = std::max(out.max_rel, rel);
    }
  }
  return out;
}

}  // namespace tst
