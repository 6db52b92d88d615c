#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "hcd/config.hpp"
#include "helpers.hpp"

using nlohmann::json;

TEST_CASE("default config resolves and fingerprints stably") {
  json cfg = hcd::resolve_config("", {});
  CHECK(cfg.at("train").at("batch").get<int>() == 16);
  CHECK(cfg.at("model").at("base_width").get<int>() == 32);
  CHECK(cfg.at("perceptual").at("backend").get<std::string>() == "random-tiny");
  const std::string fp = hcd::config_fingerprint(cfg);
  CHECK(fp.size() == 16);
  CHECK(fp == hcd::config_fingerprint(hcd::resolve_config("", {})));
  json other = hcd::resolve_config("", {"train.batch=4"});
  CHECK(fp != hcd::config_fingerprint(other));
}

TEST_CASE("config file merge and overrides") {
  auto dir = tst::tmp_dir("config");
  const std::string path = (dir / "cfg.json").string();
  {
    std::ofstream out(path);
    out << R"({"train": {"batch": 3, "total_steps": 7}, "model": {"base_width": 8}})";
  }
  json cfg = hcd::resolve_config(path, {"train.batch=5", "synth.depth_mode=radial"});
  CHECK(cfg.at("train").at("batch").get<int>() == 5);        // --set wins over file
  CHECK(cfg.at("train").at("total_steps").get<int>() == 7);  // file wins over default
  CHECK(cfg.at("train").at("lr_init").get<double>() == 2e-4);  // default preserved
  CHECK(cfg.at("model").at("base_width").get<int>() == 8);
  CHECK(cfg.at("synth").at("depth_mode").get<std::string>() == "radial");
}

TEST_CASE("config rejects unknown keys and wrong types") {
  CHECK_THROWS_WITH(hcd::resolve_config("", {"train.batch_size=4"}),
                    Catch::Matchers::ContainsSubstring("train.batch_size"));
  CHECK_THROWS_AS(hcd::resolve_config("", {"nope.x=1"}), hcd::ConfigError);
  CHECK_THROWS_AS(hcd::resolve_config("", {"train.batch=fast"}), hcd::ConfigError);
  CHECK_THROWS_AS(hcd::resolve_config("", {"train=1"}), hcd::ConfigError);
  CHECK_THROWS_AS(hcd::resolve_config("", {"malformed"}), hcd::ConfigError);
  // Strings that are not valid JSON stay strings.
  json cfg = hcd::resolve_config("", {"perceptual.backend=identity"});
  CHECK(cfg.at("perceptual").at("backend").get<std::string>() == "identity");

  auto dir = tst::tmp_dir("config_bad");
  const std::string path = (dir / "bad.json").string();
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(hcd::resolve_config(path, {}), hcd::ParseError);
  CHECK_THROWS_AS(hcd::resolve_config((dir / "missing.json").string(), {}), hcd::ConfigError);
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"eval": {"mode": 3}})";
  }
  CHECK_THROWS_AS(hcd::resolve_config(path, {}), hcd::ConfigError);
}

TEST_CASE("effective config echo") {
  auto dir = tst::tmp_dir("config_echo");
  json cfg = hcd::resolve_config("", {"train.seed=9"});
  hcd::echo_effective_config(cfg, dir.string());
  std::ifstream in(dir / "effective_config.json");
  REQUIRE(in.good());
  json back = json::parse(in);
  CHECK(back == cfg);
}

TEST_CASE("synth config from json") {
  json cfg = hcd::resolve_config("", {"synth.n=3", "synth.beta_max=2.0"});
  hcd::SynthConfig sc = hcd::synth_config_from_json(cfg.at("synth"));
  CHECK(sc.n == 3);
  CHECK(sc.beta_max == 2.0);
  CHECK(sc.depth_mode == "mix");
  // Range checks live in the synth config itself, not the schema pass.
  json bad = hcd::resolve_config("", {"synth.n=-2"});
  CHECK_THROWS_AS(hcd::synth_config_from_json(bad.at("synth")), hcd::Error);
}
