#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "hcd/serialize.hpp"
#include "helpers.hpp"

using hcd::ArrayArchive;
using hcd::Tensor;

namespace {

ArrayArchive sample_archive(hcd::Rng& rng) {
  ArrayArchive a;
  a.meta = {{"format", "test"}, {"note", "roundtrip"}, {"k", 3}};
  a.arrays.emplace_back("alpha", tst::rand_tensor({2, 3, 4}, rng));
  a.arrays.emplace_back("beta/gamma", tst::rand_tensor({5}, rng));
  a.arrays.emplace_back("w", tst::rand_tensor({2, 2, 3, 3}, rng));
  return a;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("archive roundtrip preserves doubles bitwise") {
  auto dir = tst::tmp_dir("serialize_rt");
  hcd::Rng rng(21);
  ArrayArchive a = sample_archive(rng);
  const std::string path = (dir / "a.bin").string();
  hcd::save_archive(a, path);
  ArrayArchive b = hcd::load_archive(path);
  CHECK(b.meta == a.meta);
  REQUIRE(b.arrays.size() == a.arrays.size());
  for (size_t i = 0; i < a.arrays.size(); ++i) {
    CHECK(b.arrays[i].first == a.arrays[i].first);
    CHECK(b.arrays[i].second.shape == a.arrays[i].second.shape);
    CHECK(hcd::max_abs_diff(b.arrays[i].second, a.arrays[i].second) == 0.0);
  }
  CHECK(b.find("alpha") != nullptr);
  CHECK(b.find("missing") == nullptr);
  CHECK_THROWS_AS(b.at("missing"), hcd::FormatError);
  CHECK(&b.at("w") == &b.arrays[2].second);
}

TEST_CASE("archive f32 packing quantizes but stays close") {
  auto dir = tst::tmp_dir("serialize_f32");
  hcd::Rng rng(22);
  ArrayArchive a;
  a.arrays.emplace_back("x", tst::rand_tensor({64}, rng));
  const std::string path = (dir / "f32.bin").string();
  hcd::save_archive(a, path, /*pack_f32=*/true);
  ArrayArchive b = hcd::load_archive(path);
  const Tensor& x = b.at("x");
  CHECK(hcd::max_abs_diff(x, a.arrays[0].second) < 1e-6);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(x.data[i] == static_cast<double>(static_cast<float>(a.arrays[0].second.data[i])));
}

TEST_CASE("archive rejects tampering, truncation, and foreign files") {
  auto dir = tst::tmp_dir("serialize_bad");
  hcd::Rng rng(23);
  ArrayArchive a = sample_archive(rng);
  const std::string path = (dir / "good.bin").string();
  hcd::save_archive(a, path);
  auto bytes = slurp(path);

  SECTION("bit flip in payload fails the checksum") {
    auto evil = bytes;
    evil[evil.size() / 2] = static_cast<char>(evil[evil.size() / 2] ^ 0x40);
    spit((dir / "flip.bin").string(), evil);
    CHECK_THROWS_AS(hcd::load_archive((dir / "flip.bin").string()), hcd::IntegrityError);
  }
  SECTION("truncation detected") {
    auto cut = bytes;
    cut.resize(cut.size() - 7);
    spit((dir / "cut.bin").string(), cut);
    CHECK_THROWS_AS(hcd::load_archive((dir / "cut.bin").string()), hcd::IntegrityError);
  }
  SECTION("bad magic is a format error") {
    auto evil = bytes;
    evil[0] = 'X';
    spit((dir / "magic.bin").string(), evil);
    CHECK_THROWS_AS(hcd::load_archive((dir / "magic.bin").string()), hcd::FormatError);
  }
  SECTION("unknown version is a format error") {
    auto evil = bytes;
    evil[8] = 9;  // little-endian u32 version right after the 8-byte magic
    spit((dir / "ver.bin").string(), evil);
    CHECK_THROWS_AS(hcd::load_archive((dir / "ver.bin").string()), hcd::FormatError);
  }
  SECTION("missing file is an io error") {
    CHECK_THROWS_AS(hcd::load_archive((dir / "nope.bin").string()), hcd::IoError);
  }
}
