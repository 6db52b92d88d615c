#include <catch2/catch_amalgamated.hpp>

#include "hcd/layers.hpp"
#include "hcd/optim.hpp"
#include "helpers.hpp"

using hcd::Tensor;

TEST_CASE("cosine schedule anchors are exact") {
  const double li = 2e-4, lf = 1e-6;
  const long long T = 1000;
  CHECK(hcd::lr_at(0, li, lf, T) == 2e-4);
  CHECK(hcd::lr_at(T, li, lf, T) == 1e-6);
  CHECK(hcd::lr_at(T / 2, li, lf, T) == 1.005e-4);
  // Also exact for an odd horizon at its own endpoints.
  CHECK(hcd::lr_at(0, li, lf, 777) == 2e-4);
  CHECK(hcd::lr_at(777, li, lf, 777) == 1e-6);

  double prev = hcd::lr_at(0, li, lf, T);
  for (long long s = 1; s <= T; ++s) {
    const double v = hcd::lr_at(s, li, lf, T);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK_THROWS_AS(hcd::lr_at(-1, li, lf, T), hcd::InvalidArgument);
  CHECK_THROWS_AS(hcd::lr_at(T + 1, li, lf, T), hcd::InvalidArgument);
  CHECK_THROWS_AS(hcd::lr_at(0, lf, li, T), hcd::InvalidArgument);  // init < final
  CHECK_THROWS_AS(hcd::lr_at(0, li, lf, 0), hcd::InvalidArgument);
}

TEST_CASE("adam single step matches the closed form") {
  hcd::ParamSet ps;
  ps.add("w", Tensor({2}, 1.0));
  hcd::Adam opt;
  opt.init(ps);
  std::vector<Tensor> grads;
  Tensor g({2});
  g.data[0] = 0.5;
  g.data[1] = -2.0;
  grads.push_back(g);
  const double lr = 1e-2;
  opt.step(ps, grads, lr);
  CHECK(opt.t == 1);
  // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  for (int i = 0; i < 2; ++i) {
    const double gi = g.data[static_cast<size_t>(i)];
    const double m_hat = (0.9 * 0.0 + 0.1 * gi) / (1.0 - 0.9);
    const double v_hat = (0.001 * gi * gi) / (1.0 - 0.999);
    const double expect = 1.0 - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(std::abs(ps.items[0].var.val().data[static_cast<size_t>(i)] - expect) < 1e-12);
  }
}

TEST_CASE("adam second step uses decayed moments") {
  hcd::ParamSet ps;
  ps.add("w", Tensor({1}, 0.0));
  hcd::Adam opt;
  opt.init(ps);
  Tensor g({1}, 1.0);
  opt.step(ps, {g}, 1e-3);
  opt.step(ps, {g}, 1e-3);
  CHECK(opt.t == 2);
  double m = 0.0, v = 0.0, w = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    w -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(std::abs(ps.items[0].var.val().data[0] - w) < 1e-15);
}

TEST_CASE("adam skips empty gradients and validates alignment") {
  hcd::ParamSet ps;
  ps.add("a", Tensor({3}, 1.0));
  ps.add("b", Tensor({2}, 1.0));
  hcd::Adam opt;
  opt.init(ps);
  std::vector<Tensor> grads(2);
  grads[1] = Tensor({2}, 1.0);  // grads[0] left empty: parameter a untouched
  opt.step(ps, grads, 1e-2);
  CHECK(ps.items[0].var.val().data[0] == 1.0);
  CHECK(ps.items[1].var.val().data[0] < 1.0);
  std::vector<Tensor> bad(1);
  CHECK_THROWS_AS(opt.step(ps, bad, 1e-2), hcd::InternalError);
}

TEST_CASE("gradient clipping rescales the global norm") {
  std::vector<Tensor> grads;
  grads.push_back(Tensor({2}, 3.0));
  grads.push_back(Tensor({1}, 4.0));  // norm = sqrt(9+9+16) = sqrt(34)
  auto copy = grads;
  hcd::clip_grad_norm(grads, 100.0);  // above the norm: untouched
  CHECK(hcd::max_abs_diff(grads[0], copy[0]) == 0.0);

  hcd::clip_grad_norm(grads, 1.0);
  double norm2 = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) norm2 += v * v;
  CHECK(std::abs(std::sqrt(norm2) - 1.0) < 1e-12);
  // Direction preserved.
  CHECK(std::abs(grads[0].data[0] / grads[1].data[0] - 3.0 / 4.0) < 1e-12);

  auto again = grads;
  hcd::clip_grad_norm(again, 0.0);  // disabled
  CHECK(hcd::max_abs_diff(again[0], grads[0]) == 0.0);
}
