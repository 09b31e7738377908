#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace polytrans {

struct ModelConfig {
  int num_domains = 4;
  int image_size = 32;
  int channels = 3;
  int latent_channels = 32;
  int encoder_depth = 2;  // stride-2 stages; the decoder mirrors them
  int decoder_depth = 2;
  int residual_blocks = 1;  // per-domain blocks on each side of the latent
  int residual_kernel = 3;
  int shared_block_depth = 1;  // residual blocks on each side of the shared latent
  int discriminator_scales = 2;
  int discriminator_depth = 2;
  int discriminator_channels = 16;
  double noise_std = 1.0;
  double init_gain = 1.0;  // weight std = init_gain / sqrt(fan_in)
  std::uint64_t init_seed = 0;
  std::string architecture = "conv";  // "conv" or "identity" (debug fixture)
  bool double_precision = false;

  void validate() const;
  torch::ScalarType dtype() const { return double_precision ? torch::kFloat64 : torch::kFloat32; }
  std::vector<std::int64_t> image_shape() const { return {channels, image_size, image_size}; }
  std::vector<std::int64_t> latent_shape() const;

  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// Encoder output: `mu` is deterministic, `z = mu + eps` with eps ~ N(0, noise_std^2).
struct LatentCode {
  torch::Tensor mu;
  torch::Tensor z;
  bool noise_enabled = false;
};

/// Atomic translation map G_target o E_source (0-based domain ids).
struct Translator {
  int source = 0;
  int target = 0;
  bool operator==(const Translator&) const = default;
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int channels, int kernel);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// The final encoder stage and first decoder stage common to every domain.
/// Exists once per NetworkSet; encoders and decoders hold unregistered views.
class SharedBlockImpl : public torch::nn::Module {
 public:
  explicit SharedBlockImpl(const ModelConfig& cfg);
  torch::Tensor encode_side(const torch::Tensor& h);
  torch::Tensor decode_side(const torch::Tensor& z);

  torch::nn::Sequential encoder_side{nullptr}, decoder_side{nullptr};
};
TORCH_MODULE(SharedBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const ModelConfig& cfg, SharedBlock shared);
  /// Returns mu.
  torch::Tensor forward(const torch::Tensor& x);
  SharedBlock& shared() { return shared_; }

  torch::nn::Sequential downsample{nullptr}, residual{nullptr};

 private:
  SharedBlock shared_;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const ModelConfig& cfg, SharedBlock shared);
  torch::Tensor forward(const torch::Tensor& z);
  SharedBlock& shared() { return shared_; }

  torch::nn::Sequential residual{nullptr}, upsample{nullptr};

 private:
  SharedBlock shared_;
};
TORCH_MODULE(Decoder);

/// Multi-scale patch discriminator: scale s sees the input average-pooled 2^s times.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ModelConfig& cfg);
  /// One logit map per scale.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);
  /// Last 1x1 convolution of each scale.
  std::vector<torch::nn::Conv2d> output_layers() const;

  torch::nn::ModuleList scales{nullptr};
};
TORCH_MODULE(Discriminator);

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// N encoders, N decoders and N discriminators around one shared block.
/// Copies share module storage (handle semantics); use clone() for a deep copy.
class NetworkSet {
 public:
  NetworkSet(ModelConfig cfg, std::vector<std::string> domain_names, std::vector<std::pair<int, int>> pairing);

  const ModelConfig& config() const { return cfg_; }
  int num_domains() const { return cfg_.num_domains; }
  const std::vector<std::string>& domain_names() const { return domain_names_; }
  const std::vector<std::pair<int, int>>& pairing() const { return pairing_; }
  int partner(int domain) const;
  int domain_index(const std::string& name) const;
  void check_domain(int d) const;

  Encoder& encoder(int d);
  Decoder& decoder(int d);
  Discriminator& discriminator(int d);
  SharedBlock& shared_block() { return shared_; }
  const Encoder& encoder(int d) const;
  const Decoder& decoder(int d) const;
  const Discriminator& discriminator(int d) const;
  const SharedBlock& shared_block() const { return shared_; }

  /// Encoder/decoder private parameters plus the shared block (each once).
  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;

  NamedTensors named_encoder_parameters(int d) const;
  NamedTensors named_decoder_parameters(int d) const;
  NamedTensors named_discriminator_parameters(int d) const;
  NamedTensors named_shared_parameters() const;
  /// Every parameter with a globally unique name ("encoder.0.downsample.0.weight", ...).
  NamedTensors named_parameters() const;

  std::int64_t parameter_count() const;
  NetworkSet clone() const;
  void set_training(bool on);

 private:
  ModelConfig cfg_;
  std::vector<std::string> domain_names_;
  std::vector<std::pair<int, int>> pairing_;
  SharedBlock shared_{nullptr};
  std::vector<Encoder> encoders_;
  std::vector<Decoder> decoders_;
  std::vector<Discriminator> discriminators_;
};

/// Default pairing (0,1), (2,3), ...
std::vector<std::pair<int, int>> consecutive_pairing(int num_domains);

/// Seeded initialisation: Gaussian weights (std = gain / sqrt(fan_in)), zero biases.
void initialize_parameters(NetworkSet& net);

/// Accepts CHW or NCHW; the result keeps the input's batchedness.
LatentCode encode(const NetworkSet& net, int d, const torch::Tensor& x, bool noise_enabled,
                  std::optional<std::uint64_t> seed = std::nullopt);
torch::Tensor decode(const NetworkSet& net, int d, const torch::Tensor& z);
/// decode(target, encode(source, x).z) and nothing else.
torch::Tensor translate(const NetworkSet& net, Translator t, const torch::Tensor& x, bool noise_enabled,
                        std::optional<std::uint64_t> seed = std::nullopt);
std::vector<torch::Tensor> discriminate(const NetworkSet& net, int d, const torch::Tensor& x);

/// Every (i, j) translator for the model: N^2 entries.
std::vector<Translator> translator_registry(const NetworkSet& net);

std::string digest_tensors(const NamedTensors& tensors);
/// Content hash of the shared block parameters.
std::string shared_block_digest(const NetworkSet& net);
/// The same hash, read through encoder d's or decoder d's view of the block.
std::string shared_block_digest_via_encoder(const NetworkSet& net, int d);
std::string shared_block_digest_via_decoder(const NetworkSet& net, int d);

}  // namespace polytrans
