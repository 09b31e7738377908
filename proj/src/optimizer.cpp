#include "polytrans/optimizer.hpp"

#include <cmath>

#include "polytrans/errors.hpp"

namespace polytrans {

nlohmann::json AdamConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon}};
}

Adam::Adam(std::vector<torch::Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    first_moment_.push_back(torch::zeros_like(p));
    second_moment_.push_back(torch::zeros_like(p));
  }
}

void Adam::step(const std::vector<torch::Tensor>& grads) {
  if (grads.size() != params_.size()) throw ContractError("Adam::step: gradient count mismatch");
  torch::NoGradGuard no_grad;
  ++steps_;
  const double correction1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = grads[i].defined() ? grads[i] : torch::zeros_like(params_[i]);
    first_moment_[i].mul_(cfg_.beta1).add_(g, 1.0 - cfg_.beta1);
    second_moment_[i].mul_(cfg_.beta2).addcmul_(g, g, 1.0 - cfg_.beta2);
    const auto denom = (second_moment_[i] / correction2).sqrt_().add_(cfg_.epsilon);
    params_[i].addcdiv_(first_moment_[i], denom, -cfg_.learning_rate / correction1);
  }
}

NamedTensors Adam::state() const {
  NamedTensors out;
  out.emplace_back("steps", torch::tensor({steps_}, torch::kInt64));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("m." + std::to_string(i), first_moment_[i]);
    out.emplace_back("v." + std::to_string(i), second_moment_[i]);
  }
  return out;
}

void Adam::load_state(const NamedTensors& state) {
  if (state.size() != 1 + 2 * params_.size() || state[0].first != "steps") {
    throw FormatError("optimizer state does not match the parameter list");
  }
  torch::NoGradGuard no_grad;
  steps_ = state[0].second.item<std::int64_t>();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& m = state[1 + 2 * i].second;
    const auto& v = state[2 + 2 * i].second;
    if (!m.sizes().equals(params_[i].sizes()) || !v.sizes().equals(params_[i].sizes())) {
      throw FormatError("optimizer moment shape mismatch at parameter " + std::to_string(i));
    }
    first_moment_[i].copy_(m);
    second_moment_[i].copy_(v);
  }
}

}  // namespace polytrans
