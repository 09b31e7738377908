#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "polytrans/model.hpp"

namespace polytrans {

/// Anything that can run translators between named domains: one joint model,
/// or several separately trained pair models side by side.
class TranslatorSource {
 public:
  virtual ~TranslatorSource() = default;
  virtual const std::vector<std::string>& domain_names() const = 0;
  virtual std::vector<std::int64_t> image_shape() const = 0;
  virtual bool supports(Translator t) const = 0;
  /// Throws ContractError for unsupported or out-of-range translators.
  virtual torch::Tensor translate(Translator t, const torch::Tensor& x, bool noise_enabled) const = 0;

  /// Every supported (i, j).
  std::vector<Translator> registry() const;
};

class JointTranslators : public TranslatorSource {
 public:
  explicit JointTranslators(NetworkSet net);
  const std::vector<std::string>& domain_names() const override { return net_.domain_names(); }
  std::vector<std::int64_t> image_shape() const override { return net_.config().image_shape(); }
  bool supports(Translator t) const override;
  torch::Tensor translate(Translator t, const torch::Tensor& x, bool noise_enabled) const override;
  const NetworkSet& net() const { return net_; }

 private:
  NetworkSet net_;
};

/// Separately trained pair models. Domain ids are global (concatenated in
/// model order); a translator is supported only within one model.
class SeparateTranslators : public TranslatorSource {
 public:
  explicit SeparateTranslators(std::vector<NetworkSet> models);
  const std::vector<std::string>& domain_names() const override { return names_; }
  std::vector<std::int64_t> image_shape() const override { return models_.front().config().image_shape(); }
  bool supports(Translator t) const override;
  torch::Tensor translate(Translator t, const torch::Tensor& x, bool noise_enabled) const override;

 private:
  std::vector<NetworkSet> models_;
  std::vector<std::string> names_;
  std::vector<std::pair<int, int>> owner_;  // global id -> (model, local id)
};

struct ChainSpec {
  std::vector<Translator> steps;
  bool noise_enabled = false;
};

/// Grammar: `src>dst(,src>dst)*`, each side a domain name (case-insensitive)
/// or a 1-based index. The empty string is the empty chain.
ChainSpec parse_chain(const std::string& text, const std::vector<std::string>& domain_names);
std::string format_chain(const ChainSpec& chain, const std::vector<std::string>& domain_names);

struct TranslationTrace {
  std::vector<torch::Tensor> images;     // original first, then one per step
  std::vector<std::string> step_labels;  // "original", "red>blue", ...
};

/// images[k+1] = translate(steps[k], images[k]). Accepts CHW or NCHW.
TranslationTrace apply_chain(const TranslatorSource& source, const ChainSpec& chain, const torch::Tensor& x);

/// Splits a trace over an NCHW batch into one trace per image.
std::vector<TranslationTrace> unbatch(const TranslationTrace& trace);

/// Rows are traces, columns are chain stages; no borders.
cv::Mat grid_image(const std::vector<TranslationTrace>& traces);
void render_grid(const std::vector<TranslationTrace>& traces, const std::filesystem::path& path);

}  // namespace polytrans
