#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "polytrans/model.hpp"

namespace polytrans {

/// Component weightings. Defaults follow the UNIT-lineage settings.
struct LossWeights {
  double kl = 0.1;
  double recon = 100.0;
  double gan = 1.0;
  double cc_kl = 0.1;
  double cc_recon = 100.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Probabilities are clamped to [eps, 1 - eps] inside every log.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// Noise control for the loss terms. When enabled, every encoding draws its
/// noise from a seed derived from `base_seed`, the domain and the role, so a
/// term computed alone reproduces the value it has inside total_objective.
struct NoiseSpec {
  bool enabled = true;
  std::uint64_t base_seed = 0;

  std::optional<std::uint64_t> for_encoding(int domain) const;        // E_d(x_d)
  std::optional<std::uint64_t> for_cycle_encoding(int domain) const;  // E_p(G_p(E_d(x_d)))
};

struct VaeTerms {
  torch::Tensor kl;     // mean over batch of ||mu||^2 / 2
  torch::Tensor recon;  // mean L1 between x and G_d(E_d(x).z)
};

struct GanTerms {
  torch::Tensor d_real;  // -mean log D(real)
  torch::Tensor d_fake;  // -mean log(1 - D(fake)), fake detached
  torch::Tensor g;       // -mean log D(fake)
  torch::Tensor d_loss() const { return d_real + d_fake; }
};

/// Gaussian KL against N(0, I) for a unit-variance encoding.
torch::Tensor latent_kl(const torch::Tensor& mu);
torch::Tensor mean_l1(const torch::Tensor& a, const torch::Tensor& b);

VaeTerms vae_loss(const NetworkSet& net, int d, const torch::Tensor& batch, const NoiseSpec& noise);

/// Binary cross-entropy adversarial terms averaged over discriminator scales.
GanTerms gan_loss(const NetworkSet& net, int d, const torch::Tensor& real_batch, const torch::Tensor& fake_batch);

/// Fake batch the objective feeds to D_d: translate(partner -> d) of the partner's batch.
torch::Tensor adversarial_fake(const NetworkSet& net, int d, const torch::Tensor& partner_batch,
                               const NoiseSpec& noise);

struct CycleTerms {
  torch::Tensor recon;     // mean L1(x, G_i(E_j(G_j(E_i(x).z)).z))
  torch::Tensor kl;        // KL of both intermediate encodings
  torch::Tensor weighted;  // w_cc_recon * recon + w_cc_kl * kl
};

CycleTerms cycle_loss(const NetworkSet& net, int i, int j, const torch::Tensor& batch, const LossWeights& weights,
                      const NoiseSpec& noise);

/// Plain-number view of one objective evaluation.
struct LossReport {
  struct Domain {
    double vae_kl = 0, vae_recon = 0, vae = 0;  // vae = w_kl * kl + w_recon * recon
    double gan_g = 0, gan_d = 0;
    double cc = 0;  // already weighted
  };
  std::vector<std::string> domain_names;
  std::vector<Domain> domains;
  double generator_total = 0;
  double discriminator_total = 0;

  /// The 3N generator-side elements: vae_<name>, gan_<name>, cc_<name>.
  std::vector<std::pair<std::string, double>> generator_elements() const;
  /// The N discriminator losses: dis_<name>.
  std::vector<std::pair<std::string, double>> discriminator_elements() const;
  /// Name and value of the first non-finite or over-limit entry, if any.
  std::optional<std::pair<std::string, double>> first_unhealthy(double limit) const;

  nlohmann::json to_json() const;
};

/// Graph-attached terms of one evaluation; `report()` reads them out.
struct ObjectiveTerms {
  std::vector<VaeTerms> vae;
  std::vector<GanTerms> gan;
  std::vector<CycleTerms> cycle;
  torch::Tensor generator_total;
  torch::Tensor discriminator_total;
  LossWeights weights;
  std::vector<std::string> domain_names;

  LossReport report() const;
};

/// Evaluates every term for every domain, with cycle and adversarial terms
/// taken within each domain's pair. `batches[d]` is domain d's batch.
/// generator_total = sum_d vae_d + w_gan * gan_g_d + cc_d;
/// discriminator_total = w_gan * sum_d gan_d_d.
ObjectiveTerms objective_terms(const NetworkSet& net, const std::vector<torch::Tensor>& batches,
                               const LossWeights& weights, const NoiseSpec& noise);

LossReport total_objective(const NetworkSet& net, const std::vector<torch::Tensor>& batches,
                           const LossWeights& weights, const NoiseSpec& noise);

}  // namespace polytrans
