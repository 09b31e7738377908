#include "polytrans/objective.hpp"

#include <cmath>
#include <set>

#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"

namespace polytrans {

namespace {

constexpr std::uint64_t kEncodingRole = 1;
constexpr std::uint64_t kCycleRole = 2;

torch::Tensor batched(const NetworkSet& net, const torch::Tensor& x) {
  auto b = x.dim() == 3 ? x.unsqueeze(0) : x;
  if (b.size(0) == 0) throw ContractError("loss terms need a nonempty batch");
  return b.to(net.config().dtype());
}

torch::Tensor neg_log_prob(const torch::Tensor& logits, bool positive) {
  auto p = torch::sigmoid(logits).clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return -(positive ? torch::log(p) : torch::log(1.0 - p)).mean();
}

void check_finite(const torch::Tensor& t, const std::string& component) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NumericalError(component, component + " is not finite");
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {kl, recon, gan, cc_kl, cc_recon}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"kl", kl}, {"recon", recon}, {"gan", gan}, {"cc_kl", cc_kl}, {"cc_recon", cc_recon}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"kl", "recon", "gan", "cc_kl", "cc_recon"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown weights key '" + key + "'");
  }
  LossWeights w;
  try {
    w.kl = j.value("kl", w.kl);
    w.recon = j.value("recon", w.recon);
    w.gan = j.value("gan", w.gan);
    w.cc_kl = j.value("cc_kl", w.cc_kl);
    w.cc_recon = j.value("cc_recon", w.cc_recon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("weights: ") + e.what());
  }
  w.validate();
  return w;
}

std::optional<std::uint64_t> NoiseSpec::for_encoding(int domain) const {
  if (!enabled) return std::nullopt;
  return mix_seed(base_seed, kEncodingRole, static_cast<std::uint64_t>(domain));
}

std::optional<std::uint64_t> NoiseSpec::for_cycle_encoding(int domain) const {
  if (!enabled) return std::nullopt;
  return mix_seed(base_seed, kCycleRole, static_cast<std::uint64_t>(domain));
}

torch::Tensor latent_kl(const torch::Tensor& mu) {
  auto b = mu.dim() == 3 ? mu.unsqueeze(0) : mu;
  return (b.pow(2).flatten(1).sum(1) / 2.0).mean();
}

torch::Tensor mean_l1(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().mean(); }

VaeTerms vae_loss(const NetworkSet& net, int d, const torch::Tensor& batch, const NoiseSpec& noise) {
  const auto x = batched(net, batch);
  const auto code = encode(net, d, x, noise.enabled, noise.for_encoding(d));
  return {latent_kl(code.mu), mean_l1(x, decode(net, d, code.z))};
}

GanTerms gan_loss(const NetworkSet& net, int d, const torch::Tensor& real_batch, const torch::Tensor& fake_batch) {
  const auto real = batched(net, real_batch);
  const auto fake = batched(net, fake_batch);
  const auto real_scores = discriminate(net, d, real);
  const auto fake_scores_detached = discriminate(net, d, fake.detach());
  const auto fake_scores = discriminate(net, d, fake);
  const double scales = static_cast<double>(real_scores.size());
  GanTerms out;
  out.d_real = torch::zeros({}, real.options());
  out.d_fake = torch::zeros({}, real.options());
  out.g = torch::zeros({}, real.options());
  for (std::size_t s = 0; s < real_scores.size(); ++s) {
    out.d_real = out.d_real + neg_log_prob(real_scores[s], true) / scales;
    out.d_fake = out.d_fake + neg_log_prob(fake_scores_detached[s], false) / scales;
    out.g = out.g + neg_log_prob(fake_scores[s], true) / scales;
  }
  return out;
}

torch::Tensor adversarial_fake(const NetworkSet& net, int d, const torch::Tensor& partner_batch,
                               const NoiseSpec& noise) {
  const int p = net.partner(d);
  return translate(net, {p, d}, batched(net, partner_batch), noise.enabled, noise.for_encoding(p));
}

CycleTerms cycle_loss(const NetworkSet& net, int i, int j, const torch::Tensor& batch, const LossWeights& weights,
                      const NoiseSpec& noise) {
  const auto x = batched(net, batch);
  const auto first = encode(net, i, x, noise.enabled, noise.for_encoding(i));
  const auto across = decode(net, j, first.z);
  const auto second = encode(net, j, across, noise.enabled, noise.for_cycle_encoding(i));
  const auto back = decode(net, i, second.z);
  CycleTerms out;
  out.recon = mean_l1(x, back);
  out.kl = latent_kl(first.mu) + latent_kl(second.mu);
  out.weighted = out.recon * weights.cc_recon + out.kl * weights.cc_kl;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, double>> LossReport::generator_elements() const {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t d = 0; d < domains.size(); ++d) out.emplace_back("vae_" + domain_names[d], domains[d].vae);
  for (std::size_t d = 0; d < domains.size(); ++d) out.emplace_back("gan_" + domain_names[d], domains[d].gan_g);
  for (std::size_t d = 0; d < domains.size(); ++d) out.emplace_back("cc_" + domain_names[d], domains[d].cc);
  return out;
}

std::vector<std::pair<std::string, double>> LossReport::discriminator_elements() const {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t d = 0; d < domains.size(); ++d) out.emplace_back("dis_" + domain_names[d], domains[d].gan_d);
  return out;
}

std::optional<std::pair<std::string, double>> LossReport::first_unhealthy(double limit) const {
  auto bad = [&](double v) { return !std::isfinite(v) || std::abs(v) > limit; };
  for (const auto& e : generator_elements()) {
    if (bad(e.second)) return e;
  }
  for (const auto& e : discriminator_elements()) {
    if (bad(e.second)) return e;
  }
  if (bad(generator_total)) return std::make_pair(std::string("generator_total"), generator_total);
  if (bad(discriminator_total)) return std::make_pair(std::string("discriminator_total"), discriminator_total);
  return std::nullopt;
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j;
  for (const auto& [name, v] : generator_elements()) j[name] = v;
  for (const auto& [name, v] : discriminator_elements()) j[name] = v;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    j["vae_kl_" + domain_names[d]] = domains[d].vae_kl;
    j["vae_recon_" + domain_names[d]] = domains[d].vae_recon;
  }
  j["generator_total"] = generator_total;
  j["discriminator_total"] = discriminator_total;
  return j;
}

LossReport ObjectiveTerms::report() const {
  LossReport r;
  r.domain_names = domain_names;
  for (std::size_t d = 0; d < vae.size(); ++d) {
    LossReport::Domain dom;
    dom.vae_kl = vae[d].kl.item<double>();
    dom.vae_recon = vae[d].recon.item<double>();
    dom.vae = (vae[d].kl * weights.kl + vae[d].recon * weights.recon).item<double>();
    dom.gan_g = gan[d].g.item<double>();
    dom.gan_d = gan[d].d_loss().item<double>();
    dom.cc = cycle[d].weighted.item<double>();
    r.domains.push_back(dom);
  }
  // Totals are re-derived from the reported elements so the decomposition is exact.
  for (const auto& [name, v] : r.generator_elements()) r.generator_total += name.rfind("gan_", 0) == 0 ? weights.gan * v : v;
  for (const auto& [name, v] : r.discriminator_elements()) r.discriminator_total += weights.gan * v;
  return r;
}

ObjectiveTerms objective_terms(const NetworkSet& net, const std::vector<torch::Tensor>& batches,
                               const LossWeights& weights, const NoiseSpec& noise) {
  const int n = net.num_domains();
  if (static_cast<int>(batches.size()) != n) {
    throw ContractError("objective needs one batch per domain: expected " + std::to_string(n) + ", got " +
                        std::to_string(batches.size()));
  }
  for (int d = 0; d < n; ++d) {
    if (!batches[d].defined()) throw ContractError("missing batch for domain '" + net.domain_names()[d] + "'");
  }
  weights.validate();

  std::vector<torch::Tensor> x(n);
  std::vector<LatentCode> codes(n);
  for (int d = 0; d < n; ++d) {
    x[d] = batched(net, batches[d]);
    codes[d] = encode(net, d, x[d], noise.enabled, noise.for_encoding(d));
  }

  ObjectiveTerms t;
  t.weights = weights;
  t.domain_names = net.domain_names();
  t.vae.resize(n);
  t.gan.resize(n);
  t.cycle.resize(n);
  // across[d] = G_p(E_d(x_d).z): the fake that D_p judges and the first half of d's cycle.
  std::vector<torch::Tensor> across(n);
  for (int d = 0; d < n; ++d) {
    const int p = net.partner(d);
    t.vae[d] = {latent_kl(codes[d].mu), mean_l1(x[d], decode(net, d, codes[d].z))};
    across[d] = decode(net, p, codes[d].z);
  }
  for (int d = 0; d < n; ++d) {
    const int p = net.partner(d);
    t.gan[d] = gan_loss(net, d, x[d], across[p]);
    const auto second = encode(net, p, across[d], noise.enabled, noise.for_cycle_encoding(d));
    auto& c = t.cycle[d];
    c.recon = mean_l1(x[d], decode(net, d, second.z));
    c.kl = latent_kl(codes[d].mu) + latent_kl(second.mu);
    c.weighted = c.recon * weights.cc_recon + c.kl * weights.cc_kl;
  }

  auto gen_total = torch::zeros({}, x[0].options());
  auto dis_total = torch::zeros({}, x[0].options());
  for (int d = 0; d < n; ++d) {
    gen_total = gen_total + (t.vae[d].kl * weights.kl + t.vae[d].recon * weights.recon);
    gen_total = gen_total + t.gan[d].g * weights.gan;
    gen_total = gen_total + t.cycle[d].weighted;
    dis_total = dis_total + t.gan[d].d_loss() * weights.gan;
  }
  t.generator_total = gen_total;
  t.discriminator_total = dis_total;

  for (int d = 0; d < n; ++d) {
    const auto& name = net.domain_names()[d];
    check_finite(t.vae[d].kl, "vae_kl_" + name);
    check_finite(t.vae[d].recon, "vae_recon_" + name);
    check_finite(t.gan[d].g, "gan_" + name);
    check_finite(t.gan[d].d_loss(), "dis_" + name);
    check_finite(t.cycle[d].weighted, "cc_" + name);
  }
  return t;
}

LossReport total_objective(const NetworkSet& net, const std::vector<torch::Tensor>& batches,
                           const LossWeights& weights, const NoiseSpec& noise) {
  torch::NoGradGuard no_grad;
  return objective_terms(net, batches, weights, noise).report();
}

}  // namespace polytrans
