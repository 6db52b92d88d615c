#include <catch2/catch_amalgamated.hpp>

#include "hcd/network.hpp"
#include "helpers.hpp"

using hcd::ModelConfig;
using hcd::Tensor;
using hcd::Var;

namespace {

void zero_params(hcd::ParamSet& ps) {
  for (auto& it : ps.items) std::fill(it.var.n->value.data.begin(), it.var.n->value.data.end(), 0.0);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_width = 8;
  c.him_submodules = 1;
  c.feb_layers = 2;
  c.feb_growth = 4;
  return c;
}

}  // namespace

TEST_CASE("model config validation and json round trip") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.base_width = 0;
  CHECK_THROWS_AS(c.validate(), hcd::ConfigError);
  c = ModelConfig{};
  c.him_submodules = 17;
  CHECK_THROWS_AS(c.validate(), hcd::ConfigError);

  ModelConfig d = tiny_config();
  d.use_dcn = false;
  d.rng_seed = 9;
  ModelConfig back = hcd::model_config_from_json(hcd::model_config_to_json(d));
  CHECK(hcd::model_config_to_json(back) == hcd::model_config_to_json(d));
  CHECK_THROWS_AS(hcd::model_config_from_json({{"base_width", "wide"}}), hcd::ConfigError);
  CHECK(d.branch_width(0) == 8);
  CHECK(d.branch_width(1) == 16);
  CHECK(d.branch_width(2) == 32);
}

TEST_CASE("hfb is an exact identity at zero weights") {
  hcd::ParamSet ps;
  hcd::Rng rng(3);
  hcd::HfbBlock blk(ps, "hfb", 8, rng);
  zero_params(ps);
  hcd::Rng drng(4);
  std::array<Var, 3> f = {hcd::constant(tst::rand_tensor({8, 8, 8}, drng)),
                          hcd::constant(tst::rand_tensor({16, 4, 4}, drng)),
                          hcd::constant(tst::rand_tensor({32, 2, 2}, drng))};
  auto out = hcd::hfb_forward(blk, f);
  for (int k = 0; k < 3; ++k) CHECK(hcd::max_abs_diff(out[k].val(), f[k].val()) == 0.0);
}

TEST_CASE("feb is an exact identity at zero weights") {
  hcd::ParamSet ps;
  hcd::Rng rng(5);
  hcd::FebBlock blk(ps, "feb", 6, 3, 4, rng);
  zero_params(ps);
  hcd::Rng drng(6);
  Var x = hcd::constant(tst::rand_tensor({6, 5, 7}, drng));
  CHECK(hcd::max_abs_diff(hcd::feb_forward(blk, x).val(), x.val()) == 0.0);
}

TEST_CASE("fab at zero weights scales by exactly 1/4") {
  hcd::ParamSet ps;
  hcd::Rng rng(7);
  hcd::FabBlock blk(ps, "fab", 16, rng);
  zero_params(ps);
  hcd::Rng drng(8);
  Var x = hcd::constant(tst::rand_tensor({16, 4, 4}, drng));
  Tensor expect = x.val();
  for (double& v : expect.data) v *= 0.25;
  CHECK(hcd::max_abs_diff(hcd::fab_forward(blk, x).val(), expect) == 0.0);
}

TEST_CASE("zero model with global residual reproduces the target pyramid") {
  ModelConfig c = tiny_config();
  hcd::Hdn model(c);
  zero_params(model.params);
  hcd::Rng rng(9);
  Tensor img = tst::rand_chw(3, 8, 12, rng);
  auto out = model.forward(img);
  auto pyr = hcd::build_target_pyramid(img);
  for (int k = 0; k < 3; ++k) CHECK(hcd::max_abs_diff(out[k].val(), pyr[k]) == 0.0);

  ModelConfig c2 = tiny_config();
  c2.global_residual = false;
  hcd::Hdn plain(c2);
  zero_params(plain.params);
  auto out2 = plain.forward(img);
  for (int k = 0; k < 3; ++k) {
    CHECK(out2[k].val().min() == 0.0);
    CHECK(out2[k].val().max() == 0.0);
  }
}

TEST_CASE("forward shapes across the pyramid") {
  ModelConfig c = tiny_config();
  hcd::Hdn model(c);
  hcd::Rng rng(10);
  Tensor img = tst::rand_chw(3, 16, 20, rng);

  auto feats = model.extract(hcd::constant(img));
  CHECK(feats[0].val().shape == std::vector<int>{8, 16, 20});
  CHECK(feats[1].val().shape == std::vector<int>{16, 8, 10});
  CHECK(feats[2].val().shape == std::vector<int>{32, 4, 5});

  auto out = model.forward(img);
  CHECK(out[0].val().shape == std::vector<int>{3, 16, 20});
  CHECK(out[1].val().shape == std::vector<int>{3, 8, 10});
  CHECK(out[2].val().shape == std::vector<int>{3, 4, 5});
  for (const auto& o : out) CHECK(o.val().all_finite());

  CHECK_THROWS_AS(model.forward(Tensor::chw(3, 18, 20, 0.1)), hcd::InvalidArgument);
  CHECK_THROWS_AS(model.forward(Tensor::chw(1, 16, 20, 0.1)), hcd::InvalidArgument);
}

TEST_CASE("construction is deterministic in the seed") {
  ModelConfig c = tiny_config();
  hcd::Hdn a(c), b(c);
  REQUIRE(a.params.items.size() == b.params.items.size());
  for (size_t i = 0; i < a.params.items.size(); ++i) {
    CHECK(a.params.items[i].name == b.params.items[i].name);
    CHECK(hcd::max_abs_diff(a.params.items[i].var.val(), b.params.items[i].var.val()) == 0.0);
  }
  ModelConfig c2 = tiny_config();
  c2.rng_seed = 1;
  hcd::Hdn d(c2);
  double diff = 0.0;
  for (size_t i = 0; i < a.params.items.size(); ++i)
    diff = std::max(diff,
                    hcd::max_abs_diff(a.params.items[i].var.val(), d.params.items[i].var.val()));
  CHECK(diff > 0.0);

  hcd::Rng rng(11);
  Tensor img = tst::rand_chw(3, 8, 8, rng);
  auto oa = a.forward(img), ob = b.forward(img);
  for (int k = 0; k < 3; ++k) CHECK(hcd::max_abs_diff(oa[k].val(), ob[k].val()) == 0.0);
}

TEST_CASE("deformable refinement equals plain refinement at init") {
  // The offset predictor is zero initialized and draws nothing from the
  // stream, so both variants build identical weights and the deformable path
  // starts on the regular sampling grid.
  ModelConfig cd = tiny_config();
  ModelConfig cp = tiny_config();
  cp.use_dcn = false;
  hcd::Hdn with_dcn(cd), plain(cp);
  hcd::Rng rng(12);
  Tensor img = tst::rand_chw(3, 8, 8, rng);
  auto oa = with_dcn.forward(img), ob = plain.forward(img);
  // On the regular grid the deformable kernel sums the same terms as the
  // plain conv in a different order, so agreement is to rounding.
  for (int k = 0; k < 3; ++k) CHECK(hcd::max_abs_diff(oa[k].val(), ob[k].val()) < 1e-12);
  // Offset predictors are the only extra parameters: ch -> 18 3x3 convs.
  const long long off_params = (162 * 8 + 18) + (162 * 16 + 18) + (162 * 32 + 18);
  CHECK(with_dcn.param_count() == plain.param_count() + off_params);
}

TEST_CASE("parameter counts are frozen for the default and variant configs") {
  ModelConfig full;  // defaults: width 32, 3 sub-modules, dcn+hfb on
  ModelConfig v2 = full;
  v2.use_hfb = false;
  ModelConfig v1 = v2;
  v1.use_dcn = false;

  hcd::Hdn m1(v1), m2(v2), m3(full);
  CHECK(m1.param_count() == 2855576);
  CHECK(m2.param_count() == 2891918);
  CHECK(m3.param_count() == 4429646);
  CHECK(m1.param_count() < m2.param_count());
  CHECK(m2.param_count() < m3.param_count());

  // use_hcl changes the loss, never the parameter set.
  ModelConfig no_hcl;
  no_hcl.use_hcl = false;
  CHECK(hcd::Hdn(no_hcl).param_count() == m3.param_count());
}

TEST_CASE("block gradient checks on tiny shapes") {
  hcd::Rng drng(13);
  SECTION("feb") {
    hcd::ParamSet ps;
    hcd::Rng rng(14);
    hcd::FebBlock blk(ps, "feb", 4, 2, 3, rng);
    Var x = hcd::leaf(tst::rand_tensor({4, 5, 5}, drng));
    std::vector<Var> leaves{x};
    for (auto& it : ps.items) leaves.push_back(it.var);
    auto r = tst::grad_check(
        [&] {
          return hcd::charbonnier_mean(hcd::feb_forward(blk, x),
                                       Tensor({4, 5, 5}, 0.0), 0.3);
        },
        leaves, 1e-4, 64);
    CHECK(r.max_rel < 1e-4);
  }
  SECTION("fab") {
    hcd::ParamSet ps;
    hcd::Rng rng(15);
    hcd::FabBlock blk(ps, "fab", 8, rng);
    Var x = hcd::leaf(tst::rand_tensor({8, 4, 4}, drng));
    std::vector<Var> leaves{x};
    for (auto& it : ps.items) leaves.push_back(it.var);
    auto r = tst::grad_check(
        [&] {
          return hcd::charbonnier_mean(hcd::fab_forward(blk, x),
                                       Tensor({8, 4, 4}, 0.0), 0.3);
        },
        leaves, 1e-4, 64);
    CHECK(r.max_rel < 1e-4);
  }
  SECTION("hfb") {
    hcd::ParamSet ps;
    hcd::Rng rng(16);
    hcd::HfbBlock blk(ps, "hfb", 2, rng);
    std::array<Var, 3> f = {hcd::leaf(tst::rand_tensor({2, 8, 8}, drng)),
                            hcd::leaf(tst::rand_tensor({4, 4, 4}, drng)),
                            hcd::leaf(tst::rand_tensor({8, 2, 2}, drng))};
    std::vector<Var> leaves{f[0], f[1], f[2]};
    for (auto& it : ps.items) leaves.push_back(it.var);
    auto r = tst::grad_check(
        [&] {
          auto out = hcd::hfb_forward(blk, f);
          return hcd::s_sum({hcd::charbonnier_mean(out[0], Tensor({2, 8, 8}, 0.0), 0.3),
                             hcd::charbonnier_mean(out[1], Tensor({4, 4, 4}, 0.0), 0.3),
                             hcd::charbonnier_mean(out[2], Tensor({8, 2, 2}, 0.0), 0.3)});
        },
        leaves, 1e-4, 48);
    CHECK(r.max_rel < 1e-4);
  }
}
