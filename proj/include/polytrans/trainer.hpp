#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polytrans/checkpoint.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/model.hpp"
#include "polytrans/objective.hpp"
#include "polytrans/optimizer.hpp"

namespace polytrans {

/// pair: one domain pair trained alone (the separately-trained baseline).
/// joint: all domains around one shared block, from scratch.
/// warm_start_finetune: joint training initialised from two pair checkpoints.
enum class Regime { pair, joint, warm_start_finetune };

/// Where the joint model's single shared block comes from during a transplant.
enum class TransplantPolicy { pair_one, pair_two, average };

std::string to_string(Regime r);
std::string to_string(TransplantPolicy p);
Regime parse_regime(const std::string& s);
TransplantPolicy parse_transplant_policy(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::pair;
  std::int64_t steps = 1000;
  int batch_size = 8;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  LossWeights weights;
  double finetune_fraction = 0.2;  // warm start: share of the per-pair step budget
  double divergence_limit = 1e6;
  bool horizontal_flip = false;
  TransplantPolicy transplant_policy = TransplantPolicy::pair_one;

  void validate() const;
  nlohmann::json to_json() const;
  /// `train` section of a config file; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& train, const nlohmann::json* weights = nullptr);
};

/// Raised when a loss element or gradient is non-finite or exceeds the limit.
struct TrainingDiverged : NumericalError {
  TrainingDiverged(const std::string& component, const std::string& what, std::optional<std::filesystem::path> last)
      : NumericalError(component, what), last_checkpoint(std::move(last)) {}
  std::optional<std::filesystem::path> last_checkpoint;
};

struct DomainImages {
  std::string name;
  torch::Tensor images;  // N x C x H x W
};

/// Per-step batches with replacement; a pure function of (seed, step, domain).
class BatchSampler {
 public:
  BatchSampler(std::vector<torch::Tensor> domains, int batch_size, std::uint64_t seed, bool horizontal_flip);
  std::vector<torch::Tensor> sample(std::int64_t step) const;

 private:
  std::vector<torch::Tensor> domains_;
  int batch_size_;
  std::uint64_t seed_;
  bool flip_;
};

/// Parameters plus both optimizers; owned by exactly one training loop.
struct TrainingState {
  TrainingState(NetworkSet network, const AdamConfig& adam);

  NetworkSet net;
  Adam generator_optimizer;
  Adam discriminator_optimizer;
  std::int64_t step = 0;
};

/// Restores parameters, optimizer moments and the step counter from a checkpoint.
TrainingState resume_state(const LoadedCheckpoint& ckpt, const AdamConfig& adam);

struct StepGradients {
  LossReport report;
  std::vector<torch::Tensor> discriminator;  // aligned with net.discriminator_parameters()
  std::vector<torch::Tensor> generator;      // aligned with net.generator_parameters()
};

/// Noise seed the trainer uses for a given step.
NoiseSpec step_noise(const TrainConfig& cfg, std::int64_t step_index);

/// Both gradients evaluated at the current (pre-update) parameters.
StepGradients compute_step_gradients(const NetworkSet& net, const std::vector<torch::Tensor>& batches,
                                     const LossWeights& weights, const NoiseSpec& noise);

/// One discriminator update followed by one generator/encoder update. The
/// returned report is measured at the pre-update parameters.
LossReport training_step(TrainingState& state, const std::vector<torch::Tensor>& batches, const TrainConfig& cfg,
                         std::int64_t step_index);

struct RunOptions {
  /// Final checkpoint, metrics.jsonl and periodic checkpoints go here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Omits wall-clock fields from metrics so reruns are byte-identical.
  bool deterministic = true;
  bool keep_history = false;
  std::function<void(std::int64_t, const LossReport&)> on_step;
  nlohmann::json provenance = nlohmann::json::object();
};

struct TrainOutput {
  NetworkSet net;
  std::int64_t steps_completed = 0;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<LossReport> history;
};

/// Runs `cfg.steps - state.step` further steps over `data` (one tensor per domain of state.net).
TrainOutput run_training(TrainingState& state, const std::vector<torch::Tensor>& data, const TrainConfig& cfg,
                         const std::string& regime_label, const RunOptions& options);

/// Picks the named domains out of `data`, in the given order.
std::vector<DomainImages> select_domains(const std::vector<DomainImages>& data, const std::vector<std::string>& names);

/// Trains a two-domain model (E, G, D for the pair plus its own shared block).
TrainOutput train_pair(const std::pair<std::string, std::string>& pair, const std::vector<DomainImages>& data,
                       ModelConfig model, const TrainConfig& cfg, const RunOptions& options = {});

/// Trains every domain in `data` jointly; `init` (if any) must match `model`.
TrainOutput train_joint(const std::vector<DomainImages>& data, ModelConfig model,
                        std::vector<std::pair<int, int>> pairing, const TrainConfig& cfg,
                        std::optional<NetworkSet> init = std::nullopt, const RunOptions& options = {});

struct TransplantResult {
  NetworkSet net;
  nlohmann::json provenance;
};

/// Builds a joint model from two pair checkpoints: unshared parameters are
/// copied verbatim, the single shared block follows `policy`.
TransplantResult warm_start_transplant(const LoadedCheckpoint& first, const LoadedCheckpoint& second,
                                       TransplantPolicy policy);

/// Transplant then joint fine-tuning for cfg.steps steps.
TrainOutput warm_start_finetune(const LoadedCheckpoint& first, const LoadedCheckpoint& second,
                                const std::vector<DomainImages>& data, const TrainConfig& cfg,
                                RunOptions options = {});

}  // namespace polytrans
