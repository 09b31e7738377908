#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "polytrans/dataset.hpp"
#include "polytrans/evaluator.hpp"
#include "polytrans/model.hpp"
#include "polytrans/trainer.hpp"

namespace polytrans {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct DataConfig {
  std::filesystem::path root;        // prepared domain folders (prepare-data / synth-data output)
  std::filesystem::path attributes;  // CelebA list_attr file
  std::filesystem::path images;      // CelebA image directory
  std::string experiment = "experiment_one";  // experiment_one | experiment_two | synthetic
  int synthetic_count = 8000;
  double eval_fraction = 0.05;
  bool disjoint_pairs = false;
  std::size_t max_per_domain = 0;

  BuildOptions build_options() const;
  DomainSpec domain_spec() const;
  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

/// Everything a config file can set. Sections: model, train, weights, data,
/// classifier, oracle. Unknown sections or keys are ConfigErrors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  ClassifierSpec classifier;
  OracleConfig oracle;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

/// Defaults when `path` is empty.
RunConfig load_run_config(const std::filesystem::path& path);

/// One per output directory, rewritten atomically at the end of each run.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
  std::string artifact_version = kArtifactVersion;
  nlohmann::json effective_config = nlohmann::json::object();
  int exit_code = 0;

  nlohmann::json to_json() const;
};

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& manifest);
std::string utc_timestamp();

/// Exclusive claim on an output directory for the lifetime of the object.
/// Throws IoError when another run holds it.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace polytrans
