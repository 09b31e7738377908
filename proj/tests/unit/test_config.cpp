#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "polytrans/config.hpp"
#include "polytrans/errors.hpp"

using namespace polytrans;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const std::string& name, const nlohmann::json& j) {
  const auto path = fs::temp_directory_path() / ("polytrans_cfg_" + name + ".json");
  std::ofstream(path) << j.dump();
  return path;
}

}  // namespace

TEST_CASE("defaults survive a json round trip") {
  const RunConfig defaults;
  const auto back = RunConfig::from_json(defaults.to_json());
  CHECK(back.to_json() == defaults.to_json());
  CHECK(back.hash() == defaults.hash());
  CHECK(load_run_config("").hash() == defaults.hash());
}

TEST_CASE("config files override only what they name") {
  const auto path = write_config("partial", {{"model", {{"image_size", 16}}},
                                             {"train", {{"steps", 25}, {"regime", "joint"}}},
                                             {"weights", {{"gan", 0.5}}},
                                             {"oracle", {{"hue_margin", 0.1}}}});
  const auto c = load_run_config(path);
  CHECK(c.model.image_size == 16);
  CHECK(c.model.latent_channels == ModelConfig{}.latent_channels);
  CHECK(c.train.steps == 25);
  CHECK(c.train.regime == Regime::joint);
  CHECK(c.train.weights.gan == 0.5);
  CHECK(c.train.weights.recon == LossWeights{}.recon);
  CHECK(c.oracle.hue_margin == 0.1);
  CHECK(c.hash() != RunConfig{}.hash());
  fs::remove(path);
}

TEST_CASE("unknown sections and keys are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json({{"optimiser", nlohmann::json::object()}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"model", {{"width", 3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"train", {{"epochs", 3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"weights", {{"style", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"folder", "x"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"classifier", {{"depth", 3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"oracle", {{"margin", 0.1}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"weights", {{"gan", -1.0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
  const auto bad = write_config("broken", nullptr);
  std::ofstream(bad) << "{ not json";
  CHECK_THROWS(load_run_config(bad));
  fs::remove(bad);
}

TEST_CASE("data config selects the domain spec") {
  DataConfig d;
  CHECK(d.domain_spec().domain_names == std::vector<std::string>{"no_glasses", "glasses", "smiling", "not_smiling"});
  d.experiment = "experiment_two";
  CHECK(d.domain_spec().domain_names[0] == "blonde");
  d.experiment = "synthetic";
  CHECK(d.domain_spec().domain_names == std::vector<std::string>{"red", "blue", "striped", "plain"});
  d.experiment = "experiment_three";
  CHECK_THROWS_AS(d.domain_spec(), ConfigError);
  CHECK(DataConfig::from_json(DataConfig{}.to_json()).to_json() == DataConfig{}.to_json());
}

TEST_CASE("run manifests are written whole") {
  const auto dir = fs::temp_directory_path() / "polytrans_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunManifest m;
  m.command = "train";
  m.seed = 5;
  m.outputs = {"a", "b"};
  write_run_manifest(dir, m);
  std::ifstream in(dir / "run_manifest.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["command"] == "train");
  CHECK(j["seed"] == 5);
  CHECK(j["artifact_version"] == kArtifactVersion);
  CHECK(j["outputs"].size() == 2);
  CHECK(utc_timestamp().back() == 'Z');
  fs::remove_all(dir);
}

TEST_CASE("an output directory is claimed by one run at a time") {
  const auto dir = fs::temp_directory_path() / "polytrans_lock";
  fs::remove_all(dir);
  {
    OutputLock first(dir);
    CHECK_THROWS_AS(OutputLock{dir}, IoError);
  }
  CHECK_NOTHROW(OutputLock{dir});
  fs::remove_all(dir);
}
