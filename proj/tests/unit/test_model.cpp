#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/model.hpp"
#include "reference.hpp"

using namespace polytrans;

namespace {

double max_abs(const torch::Tensor& a, const reference::Image& b) {
  const auto t = a.to(torch::kFloat64).contiguous();
  double worst = 0;
  for (std::int64_t i = 0; i < t.numel(); ++i) worst = std::max(worst, std::abs(t.data_ptr<double>()[i] - b.v[i]));
  return worst;
}

void set_param(const NetworkSet& net, const std::string& name, const std::vector<double>& values) {
  torch::NoGradGuard no_grad;
  for (const auto& [n, t] : net.named_parameters()) {
    if (n == name) {
      REQUIRE(static_cast<std::size_t>(t.numel()) == values.size());
      t.copy_(torch::tensor(values, torch::kFloat64).view(t.sizes()));
      return;
    }
  }
  FAIL("no parameter " << name);
}

// 2x2 single-channel images, one latent channel, shared block reduced to identity.
NetworkSet toy_net() {
  ModelConfig c;
  c.num_domains = 2;
  c.image_size = 2;
  c.channels = 1;
  c.latent_channels = 1;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.residual_blocks = 0;
  c.residual_kernel = 1;
  c.discriminator_scales = 1;
  c.discriminator_depth = 1;
  c.discriminator_channels = 1;
  c.double_precision = true;
  NetworkSet net(c, {"a", "b"}, {{0, 1}});
  torch::NoGradGuard no_grad;
  for (const auto& [n, t] : net.named_parameters()) t.zero_();
  return net;
}

std::vector<double> kernel(const std::map<std::pair<int, int>, double>& entries) {
  std::vector<double> k(16, 0.0);
  for (const auto& [pos, v] : entries) k[pos.first * 4 + pos.second] = v;
  return k;
}

}  // namespace

TEST_CASE("shapes follow the config") {
  ModelConfig c;
  c.num_domains = 4;
  c.image_size = 64;
  c.latent_channels = 8;
  c.discriminator_scales = 2;
  auto net = fixtures::make_net(c);
  const auto x = torch::rand({3, 64, 64}) * 2 - 1;
  const auto code = encode(net, 2, x, false);
  CHECK(code.mu.sizes().vec() == c.latent_shape());
  CHECK(decode(net, 1, code.z).sizes().vec() == std::vector<std::int64_t>{3, 64, 64});
  CHECK(encode(net, 0, x.unsqueeze(0).repeat({5, 1, 1, 1}), false).mu.size(0) == 5);
  CHECK(discriminate(net, 3, x).size() == 2);
}

TEST_CASE("contract errors") {
  auto net = fixtures::make_net(fixtures::small_config());
  const auto good = torch::zeros({3, 8, 8}, torch::kFloat64);
  CHECK_THROWS_AS(encode(net, 0, torch::zeros({3, 9, 8}), false), ContractError);
  CHECK_THROWS_AS(encode(net, 0, torch::zeros({1, 8, 8}), false), ContractError);
  CHECK_THROWS_AS(encode(net, 4, good, false), ContractError);
  CHECK_THROWS_AS(encode(net, -1, good, false), ContractError);
  CHECK_THROWS_AS(decode(net, 0, torch::zeros({4, 3, 3})), ContractError);
  CHECK_THROWS_AS(translate(net, {0, 7}, good, false), ContractError);
  CHECK_THROWS_AS(discriminate(net, 0, torch::zeros({3, 4, 4})), ContractError);
  ModelConfig odd = fixtures::small_config();
  odd.num_domains = 3;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  odd = fixtures::small_config();
  odd.shared_block_depth = 0;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
}

TEST_CASE("forward passes agree with the scalar reference") {
  auto net = fixtures::make_net(fixtures::small_config());
  const reference::Net ref(net);
  const auto batches = fixtures::random_batches(net.config(), 2, 3);
  for (int d = 0; d < 4; ++d) {
    const auto x = batches[d][0];
    const auto mu = encode(net, d, x, false).mu;
    const auto ref_mu = ref.encode(d, reference::from_tensor(x));
    CHECK(max_abs(mu, ref_mu) < 1e-12);
    CHECK(max_abs(decode(net, (d + 1) % 4, mu), ref.decode((d + 1) % 4, ref_mu)) < 1e-12);
    const auto scores = discriminate(net, d, x);
    const auto ref_scores = ref.discriminate(d, reference::from_tensor(x));
    REQUIRE(scores.size() == ref_scores.size());
    for (std::size_t s = 0; s < scores.size(); ++s) CHECK(max_abs(scores[s], ref_scores[s]) < 1e-12);
  }
}

TEST_CASE("hand-set 2x2 toy: decode, translate and discriminate") {
  auto net = toy_net();
  // Encoder taps on the four pixels; the padded 2x2 input sits at kernel rows/cols 1..2.
  set_param(net, "encoder.0.downsample.0.weight", kernel({{{1, 1}, 0.5}, {{1, 2}, -0.25}, {{2, 1}, 0.125}, {{2, 2}, 1.0}}));
  set_param(net, "encoder.0.downsample.0.bias", {0.1});
  set_param(net, "decoder.1.upsample.0.weight", kernel({{{1, 1}, 0.3}, {{1, 2}, -0.6}, {{2, 1}, 0.9}, {{2, 2}, 0.2}}));
  set_param(net, "decoder.1.upsample.0.bias", {-0.05});
  set_param(net, "discriminator.1.scales.0.0.weight", kernel({{{1, 1}, 1.0}, {{1, 2}, 2.0}, {{2, 1}, -1.0}, {{2, 2}, 0.5}}));
  set_param(net, "discriminator.1.scales.0.0.bias", {0.2});
  set_param(net, "discriminator.1.scales.0.2.weight", {1.5});
  set_param(net, "discriminator.1.scales.0.2.bias", {-0.1});

  const auto x = torch::tensor({0.2, -0.4, 0.6, 0.8}, torch::kFloat64).view({1, 2, 2});
  const double mu = 0.1 + 0.5 * 0.2 - 0.25 * -0.4 + 0.125 * 0.6 + 1.0 * 0.8;  // positive: LeakyReLU passes it
  CHECK(encode(net, 0, x, false).mu.item<double>() == doctest::Approx(mu).epsilon(1e-14));

  const std::vector<double> g{std::tanh(-0.05 + 0.3 * mu), std::tanh(-0.05 - 0.6 * mu), std::tanh(-0.05 + 0.9 * mu),
                              std::tanh(-0.05 + 0.2 * mu)};
  const auto out = translate(net, {0, 1}, x, false).flatten();
  for (int i = 0; i < 4; ++i) CHECK(out[i].item<double>() == doctest::Approx(g[i]).epsilon(1e-14));

  const double h = 0.2 + 1.0 * 0.2 + 2.0 * -0.4 - 1.0 * 0.6 + 0.5 * 0.8;  // negative: LeakyReLU scales by 0.2
  REQUIRE(h < 0);
  CHECK(discriminate(net, 1, x)[0].item<double>() == doctest::Approx(-0.1 + 1.5 * 0.2 * h).epsilon(1e-14));
}

TEST_CASE("zeroed final discriminator layer gives probability one half") {
  auto net = fixtures::make_net(fixtures::small_config());
  torch::NoGradGuard no_grad;
  for (auto& layer : net.discriminator(2)->output_layers()) {
    layer->weight.zero_();
    layer->bias.zero_();
  }
  for (const auto& s : discriminate(net, 2, fixtures::random_batches(net.config(), 3, 1)[2])) {
    CHECK(torch::sigmoid(s).eq(0.5).all().item<bool>());
  }
}

TEST_CASE("noise off is deterministic; translate is decode after encode") {
  auto net = fixtures::make_net(fixtures::small_config());
  const auto x = fixtures::random_batches(net.config(), 2, 5)[0];
  const auto a = encode(net, 1, x, false);
  const auto b = encode(net, 1, x, false);
  CHECK(torch::equal(a.mu, b.mu));
  CHECK(torch::equal(a.z, a.mu));
  CHECK(torch::equal(translate(net, {1, 3}, x, false), decode(net, 3, a.z)));
  CHECK(torch::equal(translate(net, {2, 2}, x, false), decode(net, 2, encode(net, 2, x, false).mu)));
  const auto s1 = encode(net, 1, x, true, 99), s2 = encode(net, 1, x, true, 99);
  CHECK(torch::equal(s1.z, s2.z));
  CHECK_FALSE(torch::equal(s1.z, s1.mu));
}

TEST_CASE("latent noise is standard normal") {
  auto cfg = fixtures::small_config();
  cfg.noise_std = 1.0;
  auto net = fixtures::make_net(cfg);
  const auto x = fixtures::random_batches(cfg, 1, 8)[0][0];
  const auto mu = encode(net, 0, x, false).mu;
  const double dim = static_cast<double>(mu.numel());
  double sum = 0, sum_sq = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto eps = encode(net, 0, x, true, static_cast<std::uint64_t>(i)).z - mu;
    sum += eps.sum().item<double>();
    sum_sq += eps.pow(2).sum().item<double>();
  }
  const double n = draws * dim;
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 4e-2 * std::sqrt(dim));
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("decode output is bounded and composition is closed") {
  auto net = fixtures::make_net(fixtures::small_config());
  auto gen = at::make_generator<at::CPUGeneratorImpl>(2);
  const auto z = torch::randn({6, 4, 2, 2}, gen, torch::kFloat64) * 50;
  const auto out = decode(net, 0, z);
  CHECK(out.abs().max().item<double>() <= 1.0);
  const auto x = fixtures::random_batches(net.config(), 2, 1)[0];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) {
        const auto y = translate(net, {j, k}, translate(net, {i, j}, x, false), false);
        CHECK(y.sizes() == x.sizes());
        CHECK(y.abs().max().item<double>() <= 1.0);
      }
    }
  }
}

TEST_CASE("registry holds N squared translators") {
  auto net = fixtures::make_net(fixtures::small_config());
  const auto reg = translator_registry(net);
  std::set<std::pair<int, int>> unique;
  for (const auto& t : reg) unique.insert({t.source, t.target});
  CHECK(reg.size() == 16);
  CHECK(unique.size() == 16);
}

TEST_CASE("shared block exists once") {
  auto net = fixtures::make_net(fixtures::small_config());
  const auto digest = shared_block_digest(net);
  CHECK(digest == shared_block_digest(net));
  for (int d = 0; d < 4; ++d) {
    CHECK(shared_block_digest_via_encoder(net, d) == digest);
    CHECK(shared_block_digest_via_decoder(net, d) == digest);
  }
  {
    torch::NoGradGuard no_grad;
    net.shared_block()->encoder_side->parameters()[0].add_(0.01);
  }
  CHECK(shared_block_digest(net) != digest);
  CHECK(shared_block_digest_via_encoder(net, 0) == shared_block_digest_via_decoder(net, 3));
  // Named parameters list the shared block once.
  int shared = 0;
  for (const auto& [name, t] : net.named_parameters()) shared += name.rfind("shared.", 0) == 0;
  CHECK(shared == static_cast<int>(net.named_shared_parameters().size()));
}

TEST_CASE("the tiny fixture stays under 500 parameters") {
  CHECK(fixtures::make_net(fixtures::tiny_config()).parameter_count() <= 500);
}

TEST_CASE("initialization is seeded and clone is deep") {
  auto a = fixtures::make_net(fixtures::small_config());
  auto b = fixtures::make_net(fixtures::small_config());
  CHECK(digest_tensors(a.named_parameters()) == digest_tensors(b.named_parameters()));
  auto cfg = fixtures::small_config();
  cfg.init_seed = 12;
  CHECK(digest_tensors(fixtures::make_net(cfg).named_parameters()) != digest_tensors(a.named_parameters()));
  auto c = a.clone();
  CHECK(digest_tensors(c.named_parameters()) == digest_tensors(a.named_parameters()));
  {
    torch::NoGradGuard no_grad;
    c.named_parameters()[0].second.add_(1.0);
  }
  CHECK(digest_tensors(c.named_parameters()) != digest_tensors(a.named_parameters()));
  for (const auto& [name, t] : a.named_parameters()) {
    if (name.size() > 4 && name.substr(name.size() - 4) == "bias") CHECK(t.abs().sum().item<double>() == 0.0);
  }
}

TEST_CASE("identity architecture is an exact round trip") {
  ModelConfig c;
  c.architecture = "identity";
  c.image_size = 8;
  auto net = fixtures::make_net(c);
  const auto x = torch::rand({2, 3, 8, 8}) * 2 - 1;
  CHECK(torch::equal(translate(net, {0, 3}, x, false), x));
}

TEST_CASE("model config json is strict") {
  const auto c = fixtures::small_config();
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  auto j = c.to_json();
  j["depth"] = 3;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
}
