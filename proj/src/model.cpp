#include "polytrans/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"

namespace nn = torch::nn;

namespace polytrans {

namespace {

constexpr double kLeakySlope = 0.2;

const std::set<std::string>& model_config_keys() {
  static const std::set<std::string> keys{
      "num_domains",          "image_size",          "channels",          "latent_channels",
      "encoder_depth",        "decoder_depth",       "residual_blocks",   "residual_kernel",
      "shared_block_depth",   "discriminator_scales", "discriminator_depth", "discriminator_channels",
      "noise_std",            "init_gain",           "init_seed",         "architecture",
      "double_precision"};
  return keys;
}

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)); }

int stage_width(int latent_channels, int depth, int stage) {
  return std::max(1, latent_channels >> (depth - 1 - stage));
}

torch::Tensor as_batch(const torch::Tensor& x, bool& was_single) {
  was_single = x.dim() == 3;
  return was_single ? x.unsqueeze(0) : x;
}

void check_image(const NetworkSet& net, const torch::Tensor& batch, const char* op) {
  const auto want = net.config().image_shape();
  if (batch.dim() != 4 || batch.size(1) != want[0] || batch.size(2) != want[1] || batch.size(3) != want[2]) {
    std::ostringstream msg;
    msg << op << ": expected image of shape [" << want[0] << ", " << want[1] << ", " << want[2] << "], got "
        << batch.sizes();
    throw ContractError(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  require(num_domains >= 2 && num_domains % 2 == 0, "num_domains must be even and >= 2");
  require(channels == 1 || channels == 3, "channels must be 1 or 3");
  require(architecture == "conv" || architecture == "identity", "architecture must be 'conv' or 'identity'");
  require(shared_block_depth >= 1, "shared_block_depth must be >= 1");
  require(encoder_depth >= 1 && decoder_depth >= 1, "encoder/decoder depth must be >= 1");
  require(encoder_depth == decoder_depth, "decoder_depth must mirror encoder_depth");
  require(residual_blocks >= 0, "residual_blocks must be >= 0");
  require(residual_kernel >= 1 && residual_kernel % 2 == 1, "residual_kernel must be odd");
  require(discriminator_scales >= 1 && discriminator_depth >= 1 && discriminator_channels >= 1,
          "discriminator scales/depth/channels must be >= 1");
  require(latent_channels >= 1, "latent_channels must be >= 1");
  require(std::isfinite(noise_std) && noise_std >= 0.0, "noise_std must be finite and >= 0");
  require(std::isfinite(init_gain) && init_gain > 0.0, "init_gain must be positive");
  const int factor = 1 << std::max(encoder_depth, discriminator_depth + discriminator_scales - 1);
  require(image_size >= factor && image_size % factor == 0,
          "image_size must be divisible by 2^depth for encoder and every discriminator scale");
}

std::vector<std::int64_t> ModelConfig::latent_shape() const {
  if (architecture == "identity") return image_shape();
  const int side = image_size >> encoder_depth;
  return {latent_channels, side, side};
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_domains", num_domains},
          {"image_size", image_size},
          {"channels", channels},
          {"latent_channels", latent_channels},
          {"encoder_depth", encoder_depth},
          {"decoder_depth", decoder_depth},
          {"residual_blocks", residual_blocks},
          {"residual_kernel", residual_kernel},
          {"shared_block_depth", shared_block_depth},
          {"discriminator_scales", discriminator_scales},
          {"discriminator_depth", discriminator_depth},
          {"discriminator_channels", discriminator_channels},
          {"noise_std", noise_std},
          {"init_gain", init_gain},
          {"init_seed", init_seed},
          {"architecture", architecture},
          {"double_precision", double_precision}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!model_config_keys().count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  ModelConfig c;
  try {
    c.num_domains = j.value("num_domains", c.num_domains);
    c.image_size = j.value("image_size", c.image_size);
    c.channels = j.value("channels", c.channels);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
    c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
    c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
    c.residual_kernel = j.value("residual_kernel", c.residual_kernel);
    c.shared_block_depth = j.value("shared_block_depth", c.shared_block_depth);
    c.discriminator_scales = j.value("discriminator_scales", c.discriminator_scales);
    c.discriminator_depth = j.value("discriminator_depth", c.discriminator_depth);
    c.discriminator_channels = j.value("discriminator_channels", c.discriminator_channels);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.init_gain = j.value("init_gain", c.init_gain);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.architecture = j.value("architecture", c.architecture);
    c.double_precision = j.value("double_precision", c.double_precision);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

ResidualBlockImpl::ResidualBlockImpl(int channels, int kernel) {
  const auto opts = nn::Conv2dOptions(channels, channels, kernel).stride(1).padding(kernel / 2);
  conv1 = register_module("conv1", nn::Conv2d(opts));
  conv2 = register_module("conv2", nn::Conv2d(opts));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2(torch::leaky_relu(conv1(x), kLeakySlope));
}

SharedBlockImpl::SharedBlockImpl(const ModelConfig& cfg) {
  encoder_side = register_module("encoder_side", nn::Sequential());
  decoder_side = register_module("decoder_side", nn::Sequential());
  if (cfg.architecture == "identity") return;
  for (int i = 0; i < cfg.shared_block_depth; ++i) {
    encoder_side->push_back(ResidualBlock(cfg.latent_channels, cfg.residual_kernel));
    decoder_side->push_back(ResidualBlock(cfg.latent_channels, cfg.residual_kernel));
  }
}

torch::Tensor SharedBlockImpl::encode_side(const torch::Tensor& h) {
  return encoder_side->is_empty() ? h : encoder_side->forward(h);
}

torch::Tensor SharedBlockImpl::decode_side(const torch::Tensor& z) {
  return decoder_side->is_empty() ? z : decoder_side->forward(z);
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg, SharedBlock shared) : shared_(std::move(shared)) {
  downsample = register_module("downsample", nn::Sequential());
  residual = register_module("residual", nn::Sequential());
  if (cfg.architecture == "identity") return;
  int in = cfg.channels;
  for (int k = 0; k < cfg.encoder_depth; ++k) {
    const int out = stage_width(cfg.latent_channels, cfg.encoder_depth, k);
    downsample->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    downsample->push_back(leaky());
    in = out;
  }
  for (int i = 0; i < cfg.residual_blocks; ++i) residual->push_back(ResidualBlock(cfg.latent_channels, cfg.residual_kernel));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  auto h = downsample->is_empty() ? x : downsample->forward(x);
  if (!residual->is_empty()) h = residual->forward(h);
  return shared_->encode_side(h);
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg, SharedBlock shared) : shared_(std::move(shared)) {
  residual = register_module("residual", nn::Sequential());
  upsample = register_module("upsample", nn::Sequential());
  if (cfg.architecture == "identity") return;
  for (int i = 0; i < cfg.residual_blocks; ++i) residual->push_back(ResidualBlock(cfg.latent_channels, cfg.residual_kernel));
  for (int k = 0; k < cfg.decoder_depth; ++k) {
    const int in = stage_width(cfg.latent_channels, cfg.decoder_depth, cfg.decoder_depth - 1 - k);
    const bool last = k == cfg.decoder_depth - 1;
    const int out = last ? cfg.channels : stage_width(cfg.latent_channels, cfg.decoder_depth, cfg.decoder_depth - 2 - k);
    upsample->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1)));
    if (!last) upsample->push_back(leaky());
  }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
  auto h = shared_->decode_side(z);
  if (!residual->is_empty()) h = residual->forward(h);
  if (upsample->is_empty()) return h;
  return torch::tanh(upsample->forward(h));
}

DiscriminatorImpl::DiscriminatorImpl(const ModelConfig& cfg) {
  scales = register_module("scales", nn::ModuleList());
  for (int s = 0; s < cfg.discriminator_scales; ++s) {
    nn::Sequential net;
    int in = cfg.channels;
    for (int k = 0; k < cfg.discriminator_depth; ++k) {
      const int out = cfg.discriminator_channels << k;
      net->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
      net->push_back(leaky());
      in = out;
    }
    net->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 1)));
    scales->push_back(net);
  }
}

std::vector<torch::Tensor> DiscriminatorImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x;
  for (std::size_t s = 0; s < scales->size(); ++s) {
    if (s > 0) h = torch::avg_pool2d(h, 2);
    out.push_back(scales[s]->as<nn::Sequential>()->forward(h));
  }
  return out;
}

std::vector<nn::Conv2d> DiscriminatorImpl::output_layers() const {
  std::vector<nn::Conv2d> out;
  for (std::size_t s = 0; s < scales->size(); ++s) {
    auto seq = std::dynamic_pointer_cast<nn::SequentialImpl>(scales.ptr()->ptr(s));
    out.push_back(nn::Conv2d(std::dynamic_pointer_cast<nn::Conv2dImpl>(seq->ptr(seq->size() - 1))));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> consecutive_pairing(int num_domains) {
  std::vector<std::pair<int, int>> out;
  for (int d = 0; d + 1 < num_domains; d += 2) out.emplace_back(d, d + 1);
  return out;
}

NetworkSet::NetworkSet(ModelConfig cfg, std::vector<std::string> domain_names, std::vector<std::pair<int, int>> pairing)
    : cfg_(std::move(cfg)), domain_names_(std::move(domain_names)), pairing_(std::move(pairing)) {
  cfg_.validate();
  if (static_cast<int>(domain_names_.size()) != cfg_.num_domains) {
    throw ConfigError("expected " + std::to_string(cfg_.num_domains) + " domain names, got " +
                      std::to_string(domain_names_.size()));
  }
  std::set<std::string> unique(domain_names_.begin(), domain_names_.end());
  if (unique.size() != domain_names_.size()) throw ConfigError("domain names must be unique");
  if (pairing_.empty()) pairing_ = consecutive_pairing(cfg_.num_domains);
  std::vector<int> covered(cfg_.num_domains, 0);
  for (auto [a, b] : pairing_) {
    if (a < 0 || b < 0 || a >= cfg_.num_domains || b >= cfg_.num_domains || a == b) {
      throw ConfigError("invalid pairing");
    }
    ++covered[a];
    ++covered[b];
  }
  if (std::any_of(covered.begin(), covered.end(), [](int c) { return c != 1; })) {
    throw ConfigError("pairing must cover every domain exactly once");
  }

  shared_ = SharedBlock(cfg_);
  shared_->to(cfg_.dtype());
  for (int d = 0; d < cfg_.num_domains; ++d) {
    encoders_.emplace_back(cfg_, shared_);
    decoders_.emplace_back(cfg_, shared_);
    discriminators_.emplace_back(cfg_);
    encoders_.back()->to(cfg_.dtype());
    decoders_.back()->to(cfg_.dtype());
    discriminators_.back()->to(cfg_.dtype());
  }
  initialize_parameters(*this);
}

int NetworkSet::partner(int domain) const {
  check_domain(domain);
  for (auto [a, b] : pairing_) {
    if (a == domain) return b;
    if (b == domain) return a;
  }
  throw ContractError("unpaired domain");
}

int NetworkSet::domain_index(const std::string& name) const {
  const auto it = std::find(domain_names_.begin(), domain_names_.end(), name);
  if (it == domain_names_.end()) throw ContractError("unknown domain '" + name + "'");
  return static_cast<int>(it - domain_names_.begin());
}

void NetworkSet::check_domain(int d) const {
  if (d < 0 || d >= cfg_.num_domains) {
    throw ContractError("domain id " + std::to_string(d) + " out of range [0, " + std::to_string(cfg_.num_domains) +
                        ")");
  }
}

Encoder& NetworkSet::encoder(int d) {
  check_domain(d);
  return encoders_[d];
}
Decoder& NetworkSet::decoder(int d) {
  check_domain(d);
  return decoders_[d];
}
Discriminator& NetworkSet::discriminator(int d) {
  check_domain(d);
  return discriminators_[d];
}
const Encoder& NetworkSet::encoder(int d) const {
  check_domain(d);
  return encoders_[d];
}
const Decoder& NetworkSet::decoder(int d) const {
  check_domain(d);
  return decoders_[d];
}
const Discriminator& NetworkSet::discriminator(int d) const {
  check_domain(d);
  return discriminators_[d];
}

namespace {

NamedTensors prefixed(const torch::nn::Module& m, const std::string& prefix) {
  NamedTensors out;
  for (const auto& item : m.named_parameters(/*recurse=*/true)) out.emplace_back(prefix + item.key(), item.value());
  return out;
}

void append(NamedTensors& dst, NamedTensors src) {
  for (auto& p : src) dst.push_back(std::move(p));
}

}  // namespace

NamedTensors NetworkSet::named_encoder_parameters(int d) const { return prefixed(*encoder(d), ""); }
NamedTensors NetworkSet::named_decoder_parameters(int d) const { return prefixed(*decoder(d), ""); }
NamedTensors NetworkSet::named_discriminator_parameters(int d) const { return prefixed(*discriminator(d), ""); }
NamedTensors NetworkSet::named_shared_parameters() const { return prefixed(*shared_, ""); }

NamedTensors NetworkSet::named_parameters() const {
  NamedTensors out;
  for (int d = 0; d < cfg_.num_domains; ++d) append(out, prefixed(*encoders_[d], "encoder." + std::to_string(d) + "."));
  for (int d = 0; d < cfg_.num_domains; ++d) append(out, prefixed(*decoders_[d], "decoder." + std::to_string(d) + "."));
  append(out, prefixed(*shared_, "shared."));
  for (int d = 0; d < cfg_.num_domains; ++d) {
    append(out, prefixed(*discriminators_[d], "discriminator." + std::to_string(d) + "."));
  }
  return out;
}

std::vector<torch::Tensor> NetworkSet::generator_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& e : encoders_) {
    for (auto& p : e->parameters()) out.push_back(p);
  }
  for (const auto& g : decoders_) {
    for (auto& p : g->parameters()) out.push_back(p);
  }
  for (auto& p : shared_->parameters()) out.push_back(p);
  return out;
}

std::vector<torch::Tensor> NetworkSet::discriminator_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& d : discriminators_) {
    for (auto& p : d->parameters()) out.push_back(p);
  }
  return out;
}

std::int64_t NetworkSet::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

NetworkSet NetworkSet::clone() const {
  NetworkSet copy(cfg_, domain_names_, pairing_);
  torch::NoGradGuard no_grad;
  const auto src = named_parameters();
  const auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.copy_(src[i].second);
  return copy;
}

void NetworkSet::set_training(bool on) {
  shared_->train(on);
  for (auto& e : encoders_) e->train(on);
  for (auto& g : decoders_) g->train(on);
  for (auto& d : discriminators_) d->train(on);
}

void initialize_parameters(NetworkSet& net) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(net.config().init_seed);
  for (auto& [name, p] : net.named_parameters()) {
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (is_bias || p.dim() < 2) {
      p.zero_();
      continue;
    }
    const bool transposed = name.find("upsample") != std::string::npos;
    const double receptive = static_cast<double>(p.numel()) / static_cast<double>(p.size(0) * p.size(1));
    // A stride-2 transposed convolution sums over a quarter of its kernel per output pixel.
    const double fan_in = transposed ? p.size(0) * receptive / 4.0 : p.size(1) * receptive;
    const double std = net.config().init_gain / std::sqrt(std::max(fan_in, 1.0));
    p.copy_(torch::randn(p.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat64)) * std);
  }
}

// ---------------------------------------------------------------------------

LatentCode encode(const NetworkSet& net, int d, const torch::Tensor& x, bool noise_enabled,
                  std::optional<std::uint64_t> seed) {
  net.check_domain(d);
  bool single = false;
  auto batch = as_batch(x, single).to(net.config().dtype());
  check_image(net, batch, "encode");
  auto mu = net.encoder(d).ptr()->forward(batch);
  LatentCode code;
  code.noise_enabled = noise_enabled;
  if (noise_enabled && net.config().noise_std > 0.0) {
    torch::Tensor eps;
    if (seed) {
      auto gen = at::make_generator<at::CPUGeneratorImpl>(*seed);
      eps = torch::randn(mu.sizes(), gen, mu.options());
    } else {
      eps = torch::randn(mu.sizes(), mu.options());
    }
    code.z = mu + eps * net.config().noise_std;
  } else {
    code.z = mu;
  }
  code.mu = single ? mu.squeeze(0) : mu;
  code.z = single ? code.z.squeeze(0) : code.z;
  return code;
}

torch::Tensor decode(const NetworkSet& net, int d, const torch::Tensor& z) {
  net.check_domain(d);
  bool single = false;
  auto batch = as_batch(z, single);
  const auto want = net.config().latent_shape();
  if (batch.dim() != 4 || batch.size(1) != want[0] || batch.size(2) != want[1] || batch.size(3) != want[2]) {
    std::ostringstream msg;
    msg << "decode: expected latent of shape [" << want[0] << ", " << want[1] << ", " << want[2] << "], got "
        << z.sizes();
    throw ContractError(msg.str());
  }
  auto out = net.decoder(d).ptr()->forward(batch);
  return single ? out.squeeze(0) : out;
}

torch::Tensor translate(const NetworkSet& net, Translator t, const torch::Tensor& x, bool noise_enabled,
                        std::optional<std::uint64_t> seed) {
  net.check_domain(t.source);
  net.check_domain(t.target);
  return decode(net, t.target, encode(net, t.source, x, noise_enabled, seed).z);
}

std::vector<torch::Tensor> discriminate(const NetworkSet& net, int d, const torch::Tensor& x) {
  net.check_domain(d);
  bool single = false;
  auto batch = as_batch(x, single).to(net.config().dtype());
  check_image(net, batch, "discriminate");
  auto scores = net.discriminator(d).ptr()->forward(batch);
  if (single) {
    for (auto& s : scores) s = s.squeeze(0);
  }
  return scores;
}

std::vector<Translator> translator_registry(const NetworkSet& net) {
  std::vector<Translator> out;
  for (int i = 0; i < net.num_domains(); ++i) {
    for (int j = 0; j < net.num_domains(); ++j) out.push_back({i, j});
  }
  return out;
}

std::string digest_tensors(const NamedTensors& tensors) {
  Sha256 h;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().contiguous();
    std::ostringstream header;
    header << name << '|' << c.scalar_type() << '|' << c.sizes() << '\n';
    h.update(header.str());
    h.update(std::span<const std::byte>(static_cast<const std::byte*>(c.data_ptr()), c.nbytes()));
  }
  return h.finish();
}

std::string shared_block_digest(const NetworkSet& net) { return digest_tensors(net.named_shared_parameters()); }

std::string shared_block_digest_via_encoder(const NetworkSet& net, int d) {
  return digest_tensors(prefixed(*net.encoder(d).ptr()->shared(), ""));
}

std::string shared_block_digest_via_decoder(const NetworkSet& net, int d) {
  return digest_tensors(prefixed(*net.decoder(d).ptr()->shared(), ""));
}

}  // namespace polytrans
