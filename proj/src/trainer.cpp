#include "polytrans/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "polytrans/digest.hpp"

namespace fs = std::filesystem;

namespace polytrans {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::pair: return "pair";
    case Regime::joint: return "joint";
    case Regime::warm_start_finetune: return "warm_start_finetune";
  }
  return "?";
}

std::string to_string(TransplantPolicy p) {
  switch (p) {
    case TransplantPolicy::pair_one: return "pair_one";
    case TransplantPolicy::pair_two: return "pair_two";
    case TransplantPolicy::average: return "average";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  if (s == "pair") return Regime::pair;
  if (s == "joint" || s == "four_way") return Regime::joint;
  if (s == "warm_start" || s == "warm_start_finetune") return Regime::warm_start_finetune;
  throw ConfigError("unknown regime '" + s + "' (expected pair, joint or warm_start)");
}

TransplantPolicy parse_transplant_policy(const std::string& s) {
  if (s == "pair_one") return TransplantPolicy::pair_one;
  if (s == "pair_two") return TransplantPolicy::pair_two;
  if (s == "average") return TransplantPolicy::average;
  throw ConfigError("unknown transplant policy '" + s + "'");
}

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("train.steps must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (!(adam.learning_rate >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw ConfigError("train: invalid optimizer settings");
  }
  if (!(finetune_fraction > 0.0)) throw ConfigError("train.finetune_fraction must be > 0");
  if (!(divergence_limit > 0.0)) throw ConfigError("train.divergence_limit must be > 0");
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"regime", to_string(regime)},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", adam.learning_rate},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"epsilon", adam.epsilon},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"weights", weights.to_json()},
          {"finetune_fraction", finetune_fraction},
          {"divergence_limit", divergence_limit},
          {"horizontal_flip", horizontal_flip},
          {"transplant_policy", to_string(transplant_policy)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& train, const nlohmann::json* weights) {
  static const std::set<std::string> known{"regime",          "steps",          "batch_size",       "learning_rate",
                                           "beta1",           "beta2",          "epsilon",          "seed",
                                           "checkpoint_every", "finetune_fraction", "divergence_limit", "horizontal_flip",
                                           "transplant_policy"};
  if (!train.is_object()) throw ConfigError("train section must be an object");
  for (const auto& [key, value] : train.items()) {
    if (!known.count(key)) throw ConfigError("unknown train config key '" + key + "'");
  }
  TrainConfig c;
  try {
    if (train.contains("regime")) c.regime = parse_regime(train.at("regime").get<std::string>());
    c.steps = train.value("steps", c.steps);
    c.batch_size = train.value("batch_size", c.batch_size);
    c.adam.learning_rate = train.value("learning_rate", c.adam.learning_rate);
    c.adam.beta1 = train.value("beta1", c.adam.beta1);
    c.adam.beta2 = train.value("beta2", c.adam.beta2);
    c.adam.epsilon = train.value("epsilon", c.adam.epsilon);
    c.seed = train.value("seed", c.seed);
    c.checkpoint_every = train.value("checkpoint_every", c.checkpoint_every);
    c.finetune_fraction = train.value("finetune_fraction", c.finetune_fraction);
    c.divergence_limit = train.value("divergence_limit", c.divergence_limit);
    c.horizontal_flip = train.value("horizontal_flip", c.horizontal_flip);
    if (train.contains("transplant_policy")) {
      c.transplant_policy = parse_transplant_policy(train.at("transplant_policy").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (weights) c.weights = LossWeights::from_json(*weights);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::vector<torch::Tensor> domains, int batch_size, std::uint64_t seed, bool horizontal_flip)
    : domains_(std::move(domains)), batch_size_(batch_size), seed_(seed), flip_(horizontal_flip) {
  for (const auto& d : domains_) {
    if (!d.defined() || d.dim() != 4 || d.size(0) == 0) throw ContractError("every domain needs at least one image");
  }
}

std::vector<torch::Tensor> BatchSampler::sample(std::int64_t step) const {
  std::vector<torch::Tensor> out;
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    const auto n = static_cast<std::uint64_t>(domains_[d].size(0));
    std::vector<std::int64_t> picks(static_cast<std::size_t>(batch_size_));
    std::vector<bool> flips(picks.size());
    for (std::size_t k = 0; k < picks.size(); ++k) {
      const auto r = mix_seed(seed_ ^ 0xB47C4ULL, static_cast<std::uint64_t>(step), d * 1'000'003ULL + k);
      picks[k] = static_cast<std::int64_t>(r % n);
      flips[k] = flip_ && ((r >> 63) != 0);
    }
    auto batch = domains_[d].index_select(0, torch::tensor(picks, torch::kInt64));
    if (flip_) {
      for (std::size_t k = 0; k < picks.size(); ++k) {
        if (flips[k]) batch[static_cast<std::int64_t>(k)] = batch[static_cast<std::int64_t>(k)].flip({2});
      }
    }
    out.push_back(batch);
  }
  return out;
}

TrainingState::TrainingState(NetworkSet network, const AdamConfig& adam)
    : net(std::move(network)),
      generator_optimizer(net.generator_parameters(), adam),
      discriminator_optimizer(net.discriminator_parameters(), adam) {}

TrainingState resume_state(const LoadedCheckpoint& ckpt, const AdamConfig& adam) {
  TrainingState state(ckpt.net, adam);
  if (ckpt.generator_optimizer) state.generator_optimizer.load_state(*ckpt.generator_optimizer);
  if (ckpt.discriminator_optimizer) state.discriminator_optimizer.load_state(*ckpt.discriminator_optimizer);
  state.step = ckpt.manifest.step;
  return state;
}

NoiseSpec step_noise(const TrainConfig& cfg, std::int64_t step_index) {
  return {true, mix_seed(cfg.seed, 0x5EEDULL, static_cast<std::uint64_t>(step_index))};
}

namespace {

std::vector<torch::Tensor> gradients_of(const torch::Tensor& loss, const std::vector<torch::Tensor>& params,
                                        bool retain) {
  if (params.empty()) return {};
  auto grads = torch::autograd::grad({loss}, params, {}, retain, false, /*allow_unused=*/true);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].defined()) grads[i] = torch::zeros_like(params[i]);
  }
  return grads;
}

void check_gradients(const std::vector<torch::Tensor>& grads, const NamedTensors& names, const std::string& side,
                     const std::optional<fs::path>& last) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!torch::isfinite(grads[i]).all().item<bool>()) {
      const std::string who = side + ":" + (i < names.size() ? names[i].first : std::to_string(i));
      throw TrainingDiverged(who, "non-finite gradient for " + who, last);
    }
  }
}

NamedTensors named_generator(const NetworkSet& net) {
  NamedTensors out;
  for (const auto& p : net.named_parameters()) {
    if (p.first.rfind("discriminator.", 0) != 0) out.push_back(p);
  }
  return out;
}

NamedTensors named_discriminator(const NetworkSet& net) {
  NamedTensors out;
  for (const auto& p : net.named_parameters()) {
    if (p.first.rfind("discriminator.", 0) == 0) out.push_back(p);
  }
  return out;
}

LossReport step_impl(TrainingState& state, const std::vector<torch::Tensor>& batches, const TrainConfig& cfg,
                     std::int64_t step_index, const std::optional<fs::path>& last_checkpoint) {
  auto grads = compute_step_gradients(state.net, batches, cfg.weights, step_noise(cfg, step_index));
  if (auto bad = grads.report.first_unhealthy(cfg.divergence_limit)) {
    std::ostringstream msg;
    msg << "loss element " << bad->first << " = " << bad->second << " at step " << step_index;
    throw TrainingDiverged(bad->first, msg.str(), last_checkpoint);
  }
  check_gradients(grads.discriminator, named_discriminator(state.net), "discriminator", last_checkpoint);
  check_gradients(grads.generator, named_generator(state.net), "generator", last_checkpoint);
  state.discriminator_optimizer.step(grads.discriminator);
  state.generator_optimizer.step(grads.generator);
  state.step = step_index + 1;
  return grads.report;
}

}  // namespace

StepGradients compute_step_gradients(const NetworkSet& net, const std::vector<torch::Tensor>& batches,
                                     const LossWeights& weights, const NoiseSpec& noise) {
  auto terms = objective_terms(net, batches, weights, noise);
  StepGradients out;
  out.report = terms.report();
  out.discriminator = gradients_of(terms.discriminator_total, net.discriminator_parameters(), /*retain=*/true);
  out.generator = gradients_of(terms.generator_total, net.generator_parameters(), /*retain=*/false);
  return out;
}

LossReport training_step(TrainingState& state, const std::vector<torch::Tensor>& batches, const TrainConfig& cfg,
                         std::int64_t step_index) {
  return step_impl(state, batches, cfg, step_index, std::nullopt);
}

// ---------------------------------------------------------------------------

namespace {

CheckpointManifest manifest_for(const TrainingState& state, const TrainConfig& cfg, const std::string& regime,
                                const nlohmann::json& provenance) {
  CheckpointManifest m;
  m.regime = regime;
  m.step = state.step;
  m.train = cfg.to_json();
  m.provenance = provenance;
  return m;
}

void save_state(const fs::path& dir, const TrainingState& state, const TrainConfig& cfg, const std::string& regime,
                const nlohmann::json& provenance) {
  const auto gen = state.generator_optimizer.state();
  const auto dis = state.discriminator_optimizer.state();
  save_checkpoint(dir, state.net, manifest_for(state, cfg, regime, provenance), &gen, &dis);
}

}  // namespace

TrainOutput run_training(TrainingState& state, const std::vector<torch::Tensor>& data, const TrainConfig& cfg,
                         const std::string& regime_label, const RunOptions& options) {
  cfg.validate();
  if (static_cast<int>(data.size()) != state.net.num_domains()) {
    throw ContractError("training data must hold one image set per domain");
  }
  std::vector<torch::Tensor> converted;
  for (const auto& d : data) converted.push_back(d.to(state.net.config().dtype()));
  const BatchSampler sampler(converted, cfg.batch_size, cfg.seed, cfg.horizontal_flip);
  state.net.set_training(true);

  std::optional<std::ofstream> metrics;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    metrics.emplace(*options.out_dir / "metrics.jsonl", state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!*metrics) throw IoError("cannot write metrics in " + options.out_dir->string());
  }

  TrainOutput out{state.net, 0, std::nullopt, {}};
  std::optional<fs::path> last_checkpoint;
  const auto started = std::chrono::steady_clock::now();
  while (state.step < cfg.steps) {
    const std::int64_t k = state.step;
    const auto report = step_impl(state, sampler.sample(k), cfg, k, last_checkpoint);
    ++out.steps_completed;
    if (metrics) {
      auto record = report.to_json();
      record["step"] = k;
      if (!options.deterministic) {
        record["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      }
      *metrics << record.dump() << '\n';
    }
    if (options.on_step) options.on_step(k, report);
    if (options.keep_history) out.history.push_back(report);
    if (options.out_dir && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
        state.step < cfg.steps) {
      std::ostringstream name;
      name << "step_" << std::setw(7) << std::setfill('0') << state.step;
      const auto dir = *options.out_dir / "checkpoints" / name.str();
      save_state(dir, state, cfg, regime_label, options.provenance);
      last_checkpoint = dir;
    }
  }
  if (options.out_dir) {
    metrics->flush();
    save_state(*options.out_dir, state, cfg, regime_label, options.provenance);
    out.checkpoint = *options.out_dir;
  }
  state.net.set_training(false);
  return out;
}

std::vector<DomainImages> select_domains(const std::vector<DomainImages>& data, const std::vector<std::string>& names) {
  std::vector<DomainImages> out;
  for (const auto& name : names) {
    const auto it = std::find_if(data.begin(), data.end(), [&](const DomainImages& d) { return d.name == name; });
    if (it == data.end()) throw ContractError("no training data for domain '" + name + "'");
    if (!it->images.defined() || it->images.size(0) == 0) {
      throw ContractError("domain '" + name + "' has no images");
    }
    out.push_back(*it);
  }
  return out;
}

namespace {

std::vector<torch::Tensor> tensors_of(const std::vector<DomainImages>& data) {
  std::vector<torch::Tensor> out;
  for (const auto& d : data) out.push_back(d.images);
  return out;
}

std::vector<std::string> names_of(const std::vector<DomainImages>& data) {
  std::vector<std::string> out;
  for (const auto& d : data) out.push_back(d.name);
  return out;
}

}  // namespace

TrainOutput train_pair(const std::pair<std::string, std::string>& pair, const std::vector<DomainImages>& data,
                       ModelConfig model, const TrainConfig& cfg, const RunOptions& options) {
  const auto selected = select_domains(data, {pair.first, pair.second});
  model.num_domains = 2;
  TrainingState state(NetworkSet(model, names_of(selected), {{0, 1}}), cfg.adam);
  return run_training(state, tensors_of(selected), cfg, to_string(Regime::pair), options);
}

TrainOutput train_joint(const std::vector<DomainImages>& data, ModelConfig model,
                        std::vector<std::pair<int, int>> pairing, const TrainConfig& cfg, std::optional<NetworkSet> init,
                        const RunOptions& options) {
  model.num_domains = static_cast<int>(data.size());
  for (const auto& d : data) {
    if (!d.images.defined() || d.images.size(0) == 0) throw ContractError("domain '" + d.name + "' has no images");
  }
  if (init) {
    if (!(init->config() == model)) throw ConfigError("initial network does not match the model config");
    if (init->domain_names() != names_of(data)) throw ConfigError("initial network domains differ from the data");
  }
  NetworkSet net = init ? *init : NetworkSet(model, names_of(data), std::move(pairing));
  TrainingState state(net, cfg.adam);
  const auto label = init ? to_string(Regime::warm_start_finetune) : to_string(Regime::joint);
  return run_training(state, tensors_of(data), cfg, label, options);
}

TransplantResult warm_start_transplant(const LoadedCheckpoint& first, const LoadedCheckpoint& second,
                                       TransplantPolicy policy) {
  const auto a = first.manifest.model.to_json();
  const auto b = second.manifest.model.to_json();
  for (const auto& [key, value] : a.items()) {
    if (key == "init_seed") continue;
    if (b.at(key) != value) {
      throw TransplantError("pair checkpoints disagree on model field '" + key + "' (" + value.dump() + " vs " +
                            b.at(key).dump() + ")");
    }
  }
  if (first.net.num_domains() != 2 || second.net.num_domains() != 2) {
    throw TransplantError("warm start expects two two-domain pair checkpoints");
  }
  std::vector<std::string> names = first.net.domain_names();
  for (const auto& n : second.net.domain_names()) {
    if (std::find(names.begin(), names.end(), n) != names.end()) {
      throw TransplantError("pair checkpoints share domain '" + n + "'");
    }
    names.push_back(n);
  }

  ModelConfig joint_cfg = first.manifest.model;
  joint_cfg.num_domains = 4;
  NetworkSet joint(joint_cfg, names, {{0, 1}, {2, 3}});
  const std::array<const NetworkSet*, 2> sources{&first.net, &second.net};
  for (int s = 0; s < 2; ++s) {
    const NetworkSet& src = *sources[s];
    for (int local = 0; local < 2; ++local) {
      const int d = 2 * s + local;
      assign_parameters(joint.named_encoder_parameters(d), src.named_encoder_parameters(local), "encoder");
      assign_parameters(joint.named_decoder_parameters(d), src.named_decoder_parameters(local), "decoder");
      assign_parameters(joint.named_discriminator_parameters(d), src.named_discriminator_parameters(local),
                        "discriminator");
    }
  }
  {
    torch::NoGradGuard no_grad;
    const auto dst = joint.named_shared_parameters();
    const auto one = first.net.named_shared_parameters();
    const auto two = second.net.named_shared_parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      switch (policy) {
        case TransplantPolicy::pair_one: dst[i].second.copy_(one[i].second); break;
        case TransplantPolicy::pair_two: dst[i].second.copy_(two[i].second); break;
        case TransplantPolicy::average: dst[i].second.copy_((one[i].second + two[i].second) / 2); break;
      }
    }
  }

  nlohmann::json provenance;
  provenance["policy"] = to_string(policy);
  provenance["sources"] = nlohmann::json::array();
  for (const auto* ckpt : {&first, &second}) {
    provenance["sources"].push_back({{"path", ckpt->directory.string()},
                                     {"hash", checkpoint_hash(ckpt->manifest)},
                                     {"domains", ckpt->manifest.domain_names},
                                     {"regime", ckpt->manifest.regime},
                                     {"step", ckpt->manifest.step}});
  }
  return {joint, provenance};
}

TrainOutput warm_start_finetune(const LoadedCheckpoint& first, const LoadedCheckpoint& second,
                                const std::vector<DomainImages>& data, const TrainConfig& cfg, RunOptions options) {
  auto transplanted = warm_start_transplant(first, second, cfg.transplant_policy);
  const auto selected = select_domains(data, transplanted.net.domain_names());
  options.provenance = transplanted.provenance;
  TrainConfig finetune = cfg;
  finetune.regime = Regime::warm_start_finetune;
  TrainingState state(transplanted.net, cfg.adam);
  return run_training(state, tensors_of(selected), finetune, to_string(Regime::warm_start_finetune), options);
}

}  // namespace polytrans
