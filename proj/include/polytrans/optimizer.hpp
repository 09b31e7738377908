#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>
#include <vector>

#include "polytrans/model.hpp"

namespace polytrans {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  nlohmann::json to_json() const;
};

/// Adaptive-moment gradient descent with bias correction. Gradients are passed
/// explicitly so generator and discriminator updates never touch each other.
class Adam {
 public:
  Adam(std::vector<torch::Tensor> params, AdamConfig cfg);

  /// `grads[i]` pairs with the i-th parameter; an undefined tensor counts as zero.
  void step(const std::vector<torch::Tensor>& grads);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  NamedTensors state() const;
  void load_state(const NamedTensors& state);

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> first_moment_;
  std::vector<torch::Tensor> second_moment_;
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
};

}  // namespace polytrans
