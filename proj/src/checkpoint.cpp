#include "polytrans/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"

namespace fs = std::filesystem;

namespace polytrans {

namespace {

constexpr char kBlobMagic[8] = {'P', 'T', 'B', 'L', 'O', 'B', '1', '\n'};

std::int32_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw ContractError("unsupported tensor dtype in parameter blob");
  }
}

torch::ScalarType dtype_from_code(std::int32_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw FormatError("unknown dtype code " + std::to_string(c));
  }
}

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError(source_ + ": truncated parameter blob");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

nlohmann::json pairing_json(const std::vector<std::pair<int, int>>& pairing) {
  nlohmann::json out = nlohmann::json::array();
  for (auto [a, b] : pairing) out.push_back({a, b});
  return out;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_parameter_blob(const fs::path& path, const NamedTensors& tensors) {
  std::string out(kBlobMagic, sizeof(kBlobMagic));
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    const auto t = tensor.detach().contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::int32_t>(out, dtype_code(t.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto s : t.sizes()) put<std::int64_t>(out, s);
    put<std::uint64_t>(out, t.nbytes());
    out.append(static_cast<const char*>(t.data_ptr()), t.nbytes());
  }
  write_file_atomic(path, out);
}

NamedTensors read_parameter_blob(const fs::path& path) {
  Reader r(read_file(path), path.string());
  if (std::memcmp(r.take(sizeof(kBlobMagic)), kBlobMagic, sizeof(kBlobMagic)) != 0) {
    throw FormatError(path.string() + ": not a parameter blob");
  }
  NamedTensors out;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len), name_len);
    const auto dtype = dtype_from_code(r.get<std::int32_t>());
    const auto ndim = r.get<std::uint32_t>();
    std::vector<std::int64_t> shape(ndim);
    for (auto& s : shape) s = r.get<std::int64_t>();
    const auto nbytes = r.get<std::uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (t.nbytes() != nbytes) throw FormatError(path.string() + ": byte count mismatch for " + name);
    std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes");
  return out;
}

void assign_parameters(const NamedTensors& dst, const NamedTensors& src, const std::string& what) {
  if (dst.size() != src.size()) {
    throw FormatError(what + ": expected " + std::to_string(dst.size()) + " tensors, found " +
                      std::to_string(src.size()));
  }
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].first != src[i].first) {
      throw FormatError(what + ": tensor '" + src[i].first + "' where '" + dst[i].first + "' was expected");
    }
    if (!dst[i].second.sizes().equals(src[i].second.sizes()) ||
        dst[i].second.scalar_type() != src[i].second.scalar_type()) {
      throw FormatError(what + ": shape or dtype mismatch for '" + dst[i].first + "'");
    }
    dst[i].second.copy_(src[i].second);
  }
}

nlohmann::json CheckpointManifest::to_json() const {
  return {{"schema_version", schema_version},
          {"model", model.to_json()},
          {"domain_names", domain_names},
          {"pairing", pairing_json(pairing)},
          {"regime", regime},
          {"step", step},
          {"train", train},
          {"provenance", provenance},
          {"blob_hashes", blob_hashes},
          {"config_hash", config_hash}};
}

CheckpointManifest CheckpointManifest::from_json(const nlohmann::json& j) {
  CheckpointManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kCheckpointSchemaVersion) {
      throw FormatError("unsupported checkpoint schema version " + std::to_string(m.schema_version));
    }
    m.model = ModelConfig::from_json(j.at("model"));
    m.domain_names = j.at("domain_names").get<std::vector<std::string>>();
    for (const auto& p : j.at("pairing")) m.pairing.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    m.regime = j.at("regime").get<std::string>();
    m.step = j.at("step").get<std::int64_t>();
    m.train = j.at("train");
    m.provenance = j.at("provenance");
    m.blob_hashes = j.at("blob_hashes").get<std::map<std::string, std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  return m;
}

CheckpointManifest save_checkpoint(const fs::path& dir, const NetworkSet& net, CheckpointManifest manifest,
                                   const NamedTensors* generator_optimizer,
                                   const NamedTensors* discriminator_optimizer) {
  fs::create_directories(dir);
  manifest.model = net.config();
  manifest.domain_names = net.domain_names();
  manifest.pairing = net.pairing();
  manifest.config_hash = sha256_hex(nlohmann::json{{"model", manifest.model.to_json()}, {"train", manifest.train}}.dump());
  manifest.blob_hashes.clear();

  auto emit = [&](const std::string& file, const NamedTensors& tensors) {
    write_parameter_blob(dir / file, tensors);
    manifest.blob_hashes[file] = sha256_file((dir / file).string());
  };
  for (int d = 0; d < net.num_domains(); ++d) {
    emit("encoder_" + std::to_string(d) + ".bin", net.named_encoder_parameters(d));
    emit("decoder_" + std::to_string(d) + ".bin", net.named_decoder_parameters(d));
    emit("discriminator_" + std::to_string(d) + ".bin", net.named_discriminator_parameters(d));
  }
  emit("shared.bin", net.named_shared_parameters());
  if (generator_optimizer) emit("optimizer_generator.bin", *generator_optimizer);
  if (discriminator_optimizer) emit("optimizer_discriminator.bin", *discriminator_optimizer);
  write_file_atomic(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, const ModelConfig* expected) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("no checkpoint manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  auto manifest = CheckpointManifest::from_json(j);
  if (expected && !(*expected == manifest.model)) {
    throw ConfigError("checkpoint " + dir.string() + " was built with a different model config:\n  expected " +
                      expected->to_json().dump() + "\n  manifest " + manifest.model.to_json().dump());
  }

  NetworkSet net(manifest.model, manifest.domain_names, manifest.pairing);
  auto load = [&](const std::string& file) {
    const auto it = manifest.blob_hashes.find(file);
    if (it == manifest.blob_hashes.end()) throw FormatError(dir.string() + ": manifest lists no " + file);
    const auto actual = sha256_file((dir / file).string());
    if (actual != it->second) throw FormatError(dir.string() + "/" + file + ": content hash does not match manifest");
    return read_parameter_blob(dir / file);
  };
  for (int d = 0; d < net.num_domains(); ++d) {
    assign_parameters(net.named_encoder_parameters(d), load("encoder_" + std::to_string(d) + ".bin"), "encoder");
    assign_parameters(net.named_decoder_parameters(d), load("decoder_" + std::to_string(d) + ".bin"), "decoder");
    assign_parameters(net.named_discriminator_parameters(d), load("discriminator_" + std::to_string(d) + ".bin"),
                      "discriminator");
  }
  assign_parameters(net.named_shared_parameters(), load("shared.bin"), "shared block");

  LoadedCheckpoint out{dir, manifest, net, std::nullopt, std::nullopt};
  if (manifest.blob_hashes.count("optimizer_generator.bin")) out.generator_optimizer = load("optimizer_generator.bin");
  if (manifest.blob_hashes.count("optimizer_discriminator.bin")) {
    out.discriminator_optimizer = load("optimizer_discriminator.bin");
  }
  return out;
}

std::string checkpoint_hash(const CheckpointManifest& manifest) {
  Sha256 h;
  for (const auto& [file, hash] : manifest.blob_hashes) {
    if (file.rfind("optimizer_", 0) == 0) continue;
    h.update(file + "=" + hash + "\n");
  }
  return h.finish();
}

}  // namespace polytrans
