#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "polytrans/model.hpp"

namespace polytrans {

inline constexpr int kCheckpointSchemaVersion = 1;

/// Raw little-endian parameter container: name, dtype, shape and bytes per
/// tensor, in the order given. Written through a temp file and renamed.
void write_parameter_blob(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_parameter_blob(const std::filesystem::path& path);

/// Copies `src` into `dst` by position, requiring identical names and shapes.
void assign_parameters(const NamedTensors& dst, const NamedTensors& src, const std::string& what);

/// Writes `contents` to `path` via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

struct CheckpointManifest {
  int schema_version = kCheckpointSchemaVersion;
  ModelConfig model;
  std::vector<std::string> domain_names;
  std::vector<std::pair<int, int>> pairing;
  std::string regime;  // pair | joint | warm_start_finetune | transplant | init
  std::int64_t step = 0;
  nlohmann::json train = nlohmann::json::object();       // effective training config incl. loss weights
  nlohmann::json provenance = nlohmann::json::object();  // transplant sources and policy
  std::map<std::string, std::string> blob_hashes;        // file name -> sha256
  std::string config_hash;

  nlohmann::json to_json() const;
  static CheckpointManifest from_json(const nlohmann::json& j);
};

struct LoadedCheckpoint {
  std::filesystem::path directory;
  CheckpointManifest manifest;
  NetworkSet net;
  std::optional<NamedTensors> generator_optimizer;
  std::optional<NamedTensors> discriminator_optimizer;
};

/// Writes one blob per network, the shared block once, optional optimizer
/// state, and manifest.json. Fills manifest.blob_hashes and config_hash.
CheckpointManifest save_checkpoint(const std::filesystem::path& dir, const NetworkSet& net, CheckpointManifest manifest,
                                   const NamedTensors* generator_optimizer = nullptr,
                                   const NamedTensors* discriminator_optimizer = nullptr);

/// Throws ConfigError when `expected` is given and differs from the manifest,
/// FormatError when blobs disagree with the manifest's hashes or shapes.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig* expected = nullptr);

/// Identity of a checkpoint's parameters: hash over its blob hashes.
std::string checkpoint_hash(const CheckpointManifest& manifest);

}  // namespace polytrans
