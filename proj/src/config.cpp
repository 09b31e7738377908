#include "polytrans/config.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>

#include "polytrans/checkpoint.hpp"
#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/synthetic.hpp"

namespace polytrans {

namespace fs = std::filesystem;

BuildOptions DataConfig::build_options() const {
  BuildOptions o;
  o.eval_fraction = eval_fraction;
  o.disjoint_pairs = disjoint_pairs;
  o.max_per_domain = max_per_domain;
  return o;
}

DomainSpec DataConfig::domain_spec() const {
  if (experiment == "experiment_one") return celeba_experiment_one();
  if (experiment == "experiment_two") return celeba_experiment_two();
  if (experiment == "synthetic") return synthetic_domain_spec();
  throw ConfigError("unknown experiment '" + experiment + "' (experiment_one, experiment_two, synthetic)");
}

nlohmann::json DataConfig::to_json() const {
  return {{"root", root.string()},
          {"attributes", attributes.string()},
          {"images", images.string()},
          {"experiment", experiment},
          {"synthetic_count", synthetic_count},
          {"eval_fraction", eval_fraction},
          {"disjoint_pairs", disjoint_pairs},
          {"max_per_domain", max_per_domain}};
}

DataConfig DataConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"root",          "attributes",     "images",         "experiment",
                                           "synthetic_count", "eval_fraction", "disjoint_pairs", "max_per_domain"};
  if (!j.is_object()) throw ConfigError("data section must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown data config key '" + key + "'");
  }
  DataConfig d;
  try {
    d.root = j.value("root", d.root.string());
    d.attributes = j.value("attributes", d.attributes.string());
    d.images = j.value("images", d.images.string());
    d.experiment = j.value("experiment", d.experiment);
    d.synthetic_count = j.value("synthetic_count", d.synthetic_count);
    d.eval_fraction = j.value("eval_fraction", d.eval_fraction);
    d.disjoint_pairs = j.value("disjoint_pairs", d.disjoint_pairs);
    d.max_per_domain = j.value("max_per_domain", d.max_per_domain);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data config: ") + e.what());
  }
  if (d.synthetic_count < 1) throw ConfigError("synthetic_count must be positive");
  if (!(d.eval_fraction >= 0 && d.eval_fraction < 1)) throw ConfigError("eval_fraction must be in [0, 1)");
  d.domain_spec();
  return d;
}

nlohmann::json RunConfig::to_json() const {
  auto train_json = train.to_json();
  train_json.erase("weights");
  return {{"model", model.to_json()},           {"train", train_json},
          {"weights", train.weights.to_json()}, {"data", data.to_json()},
          {"classifier", classifier.to_json()}, {"oracle", oracle.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> sections{"model", "train", "weights", "data", "classifier", "oracle"};
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!sections.count(key)) throw ConfigError("unknown config section '" + key + "'");
  }
  RunConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  const nlohmann::json empty = nlohmann::json::object();
  const auto* weights = j.contains("weights") ? &j.at("weights") : nullptr;
  c.train = TrainConfig::from_json(j.contains("train") ? j.at("train") : empty, weights);
  if (j.contains("data")) c.data = DataConfig::from_json(j.at("data"));
  if (j.contains("classifier")) c.classifier = ClassifierSpec::from_json(j.at("classifier"));
  if (j.contains("oracle")) {
    static const std::set<std::string> known{"hue_margin", "stripe_threshold"};
    const auto& o = j.at("oracle");
    if (!o.is_object()) throw ConfigError("oracle section must be an object");
    for (const auto& [key, value] : o.items()) {
      if (!known.count(key)) throw ConfigError("unknown oracle config key '" + key + "'");
    }
    try {
      c.oracle.hue_margin = o.value("hue_margin", c.oracle.hue_margin);
      c.oracle.stripe_threshold = o.value("stripe_threshold", c.oracle.stripe_threshold);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("oracle config: ") + e.what());
    }
    c.oracle.validate();
  }
  return c;
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

RunConfig load_run_config(const fs::path& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},
          {"config_hash", config_hash},
          {"seed", seed},
          {"inputs", inputs},
          {"outputs", outputs},
          {"started_at", started_at},
          {"finished_at", finished_at},
          {"artifact_version", artifact_version},
          {"effective_config", effective_config},
          {"exit_code", exit_code}};
}

void write_run_manifest(const fs::path& dir, const RunManifest& manifest) {
  fs::create_directories(dir);
  write_file_atomic(dir / "run_manifest.json", manifest.to_json().dump(2) + "\n");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".polytrans.lock") {
  fs::create_directories(dir);
  fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd_ < 0) throw IoError("cannot create lock file " + path_.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("output directory " + dir.string() + " is in use by another run");
  }
}

OutputLock::~OutputLock() {
  if (fd_ >= 0) {
    std::error_code ec;
    fs::remove(path_, ec);
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace polytrans
