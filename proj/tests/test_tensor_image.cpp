#include <catch2/catch_amalgamated.hpp>

#include "hcd/image.hpp"
#include "hcd/tensor.hpp"
#include "helpers.hpp"

using hcd::Tensor;

TEST_CASE("tensor basics") {
  Tensor t = Tensor::chw(2, 3, 4, 1.5);
  CHECK(t.rank() == 3);
  CHECK(t.numel() == 24);
  CHECK(t.channels() == 2);
  CHECK(t.height() == 3);
  CHECK(t.width() == 4);
  CHECK(t.mean() == 1.5);
  t.at(1, 2, 3) = -2.0;
  CHECK(t.min() == -2.0);
  CHECK(t.max() == 1.5);
  CHECK(t.at(1, 2, 3) == -2.0);
  CHECK(t.same_shape(Tensor::chw(2, 3, 4)));
  CHECK_FALSE(t.same_shape(Tensor::chw(2, 4, 3)));
  CHECK(t.all_finite());
  t.at(0, 0, 0) = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(hcd::ensure_finite(t, "x"), hcd::InvalidArgument);

  Tensor s = Tensor::scalar(3.0);
  CHECK(s.rank() == 1);
  CHECK(s.numel() == 1);
  CHECK(s[0] == 3.0);

  Tensor w({2, 3, 4, 4});
  CHECK(w.rank() == 4);
  w.at4(1, 2, 3, 3) = 7.0;
  CHECK(w.at4(1, 2, 3, 3) == 7.0);
  CHECK(hcd::max_abs_diff(Tensor::chw(1, 2, 2, 1.0), Tensor::chw(1, 2, 2, 0.25)) == 0.75);
}

TEST_CASE("reflect_index folds with period 2(size-1)") {
  CHECK(hcd::reflect_index(0, 4) == 0);
  CHECK(hcd::reflect_index(3, 4) == 3);
  CHECK(hcd::reflect_index(-1, 4) == 1);
  CHECK(hcd::reflect_index(-2, 4) == 2);
  CHECK(hcd::reflect_index(4, 4) == 2);
  CHECK(hcd::reflect_index(5, 4) == 1);
  CHECK(hcd::reflect_index(6, 4) == 0);
  CHECK(hcd::reflect_index(7, 4) == 1);  // wrapped a full period
  CHECK(hcd::reflect_index(-7, 4) == 1);
  CHECK(hcd::reflect_index(123, 1) == 0);
  CHECK(hcd::reflect_index(-9, 2) == 1);
}

TEST_CASE("resize_bilinear matches the frozen half-pixel oracle") {
  Tensor in = Tensor::chw(1, 1, 2);
  in.at(0, 0, 0) = 0.0;
  in.at(0, 0, 1) = 1.0;
  Tensor out = hcd::resize_bilinear(in, 1, 4);
  // Half-pixel source centers for width 2 -> 4 are -0.25, 0.25, 0.75, 1.25;
  // edge clamping pins the ends.
  const double expect[4] = {0.0, 0.25, 0.75, 1.0};
  for (int x = 0; x < 4; ++x) CHECK(out.at(0, 0, x) == expect[x]);
}

TEST_CASE("resize_bilinear same-size is bitwise identity") {
  hcd::Rng rng(11);
  Tensor in = tst::rand_chw(3, 7, 5, rng);
  Tensor out = hcd::resize_bilinear(in, 7, 5);
  CHECK(hcd::max_abs_diff(in, out) == 0.0);
}

TEST_CASE("resize_bilinear preserves constants and stays in range") {
  Tensor in = Tensor::chw(2, 5, 9, 0.37);
  Tensor up = hcd::resize_bilinear(in, 13, 4);
  CHECK(hcd::max_abs_diff(up, Tensor::chw(2, 13, 4, 0.37)) < 1e-15);
  hcd::Rng rng(3);
  Tensor r = tst::rand_chw(1, 6, 6, rng);
  Tensor z = hcd::resize_bilinear(r, 17, 3);
  CHECK(z.min() >= r.min());
  CHECK(z.max() <= r.max());
}

TEST_CASE("downsample2_area averages 2x2 blocks") {
  Tensor in = Tensor::chw(1, 2, 4);
  double vals[8] = {1, 2, 3, 4, 5, 6, 7, 8};
  for (int i = 0; i < 8; ++i) in.data[static_cast<size_t>(i)] = vals[i];
  Tensor out = hcd::downsample2_area(in);
  REQUIRE(out.shape == std::vector<int>{1, 1, 2});
  CHECK(out.at(0, 0, 0) == (1 + 2 + 5 + 6) * 0.25);
  CHECK(out.at(0, 0, 1) == (3 + 4 + 7 + 8) * 0.25);
  CHECK_THROWS_AS(hcd::downsample2_area(Tensor::chw(1, 3, 4)), hcd::InvalidArgument);
}

TEST_CASE("build_target_pyramid shapes and mean preservation") {
  hcd::Rng rng(5);
  Tensor img = tst::rand_chw(3, 8, 12, rng);
  auto p = hcd::build_target_pyramid(img);
  CHECK(p[0].shape == std::vector<int>{3, 8, 12});
  CHECK(p[1].shape == std::vector<int>{3, 4, 6});
  CHECK(p[2].shape == std::vector<int>{3, 2, 3});
  CHECK(std::abs(p[0].mean() - p[1].mean()) < 1e-12);
  CHECK(std::abs(p[0].mean() - p[2].mean()) < 1e-12);
  CHECK_THROWS_AS(hcd::build_target_pyramid(Tensor::chw(3, 6, 8)), hcd::InvalidArgument);
}

TEST_CASE("crop and rot90") {
  hcd::Rng rng(7);
  Tensor img = tst::rand_chw(2, 5, 6, rng);
  Tensor c = hcd::crop(img, 1, 2, 3, 4);
  CHECK(c.shape == std::vector<int>{2, 3, 4});
  CHECK(c.at(1, 0, 0) == img.at(1, 1, 2));
  CHECK(c.at(0, 2, 3) == img.at(0, 3, 5));
  CHECK_THROWS_AS(hcd::crop(img, 3, 3, 3, 4), hcd::InvalidArgument);

  // One quarter turn counter-clockwise sends row [a, b] to column [b; a].
  Tensor row = Tensor::chw(1, 1, 2);
  row.at(0, 0, 0) = 1.0;
  row.at(0, 0, 1) = 2.0;
  Tensor turned = hcd::rot90(row, 1);
  REQUIRE(turned.shape == std::vector<int>{1, 2, 1});
  CHECK(turned.at(0, 0, 0) == 2.0);
  CHECK(turned.at(0, 1, 0) == 1.0);

  Tensor r4 = hcd::rot90(hcd::rot90(hcd::rot90(hcd::rot90(img, 1), 1), 1), 1);
  CHECK(hcd::max_abs_diff(img, r4) == 0.0);
  CHECK(hcd::max_abs_diff(hcd::rot90(img, 2), hcd::rot90(hcd::rot90(img, 1), 1)) == 0.0);
  CHECK(hcd::max_abs_diff(hcd::rot90(img, 3), hcd::rot90(img, -1)) == 0.0);
  CHECK(hcd::rot90(img, 1).shape == (std::vector<int>{2, 6, 5}));
}

TEST_CASE("pad_reflect mirrors without repeating the edge") {
  Tensor in = Tensor::chw(1, 1, 3);
  in.at(0, 0, 0) = 1.0;
  in.at(0, 0, 1) = 2.0;
  in.at(0, 0, 2) = 3.0;
  Tensor out = hcd::pad_reflect(in, 0, 0, 2, 2);
  const double expect[7] = {3, 2, 1, 2, 3, 2, 1};
  REQUIRE(out.width() == 7);
  for (int x = 0; x < 7; ++x) CHECK(out.at(0, 0, x) == expect[x]);

  // Pads larger than the image fold repeatedly instead of reading out of range.
  Tensor big = hcd::pad_reflect(in, 0, 0, 5, 0);
  CHECK(big.width() == 8);
  CHECK(big.all_finite());

  hcd::Rng rng(9);
  Tensor img = tst::rand_chw(3, 4, 4, rng);
  Tensor p = hcd::pad_reflect(img, 1, 2, 3, 0);
  CHECK(p.shape == std::vector<int>{3, 7, 7});
  CHECK(hcd::max_abs_diff(hcd::crop(p, 1, 3, 4, 4), img) == 0.0);
}

TEST_CASE("clamp01") {
  Tensor t = Tensor::chw(1, 1, 3);
  t.at(0, 0, 0) = -0.5;
  t.at(0, 0, 1) = 0.5;
  t.at(0, 0, 2) = 1.5;
  Tensor c = hcd::clamp01(t);
  CHECK(c.at(0, 0, 0) == 0.0);
  CHECK(c.at(0, 0, 1) == 0.5);
  CHECK(c.at(0, 0, 2) == 1.0);
}
