#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "polytrans/composer.hpp"

namespace polytrans {

// ---------------------------------------------------------------------------
// Synthetic attribute oracle

enum class OracleColor { red, blue, indeterminate };
enum class OracleTexture { plain, striped, indeterminate };

std::string to_string(OracleColor c);
std::string to_string(OracleTexture t);

struct OracleConfig {
  double hue_margin = 0.04;       // |mean(R) - mean(B)| must exceed this
  double stripe_threshold = 0.12; // band energy at or above this means striped

  void validate() const;
  nlohmann::json to_json() const;
};

struct OracleStatistics {
  double hue_difference = 0;  // mean(R) - mean(B)
  double stripe_energy = 0;   // row-derivative energy at 1 / kStripePeriod
};

struct OracleVerdict {
  OracleColor color = OracleColor::indeterminate;
  OracleTexture texture = OracleTexture::indeterminate;
  bool operator==(const OracleVerdict&) const = default;
};

OracleStatistics oracle_statistics(const torch::Tensor& image);
OracleVerdict synthetic_oracle(const torch::Tensor& image, const OracleConfig& cfg = {});

// ---------------------------------------------------------------------------
// Variety

/// Mean L1 between x and translate(j -> i, translate(i -> j, x)) over the
/// first `sample_size` images of `images` (all of them when sample_size <= 0),
/// with noise off.
double cycle_consistency_metric(const TranslatorSource& source, Translator pair, const torch::Tensor& images,
                                std::int64_t sample_size = 0);

// ---------------------------------------------------------------------------
// Combination classifier

struct ClassifierSpec {
  int num_classes = 4;
  std::string architecture = "tiny";  // tiny | vgg11
  int image_size = 32;
  int channels = 3;
  double train_fraction = 0.8;
  int steps = 300;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int min_examples_per_class = 8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierSpec from_json(const nlohmann::json& j);
};

class ClassifierNetImpl : public torch::nn::Module {
 public:
  explicit ClassifierNetImpl(const ClassifierSpec& spec);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential features{nullptr}, head{nullptr};
};
TORCH_MODULE(ClassifierNet);

class Classifier {
 public:
  explicit Classifier(ClassifierSpec spec);
  const ClassifierSpec& spec() const { return spec_; }
  ClassifierNet& net() { return net_; }
  NamedTensors named_parameters() const;

  torch::Tensor logits(const torch::Tensor& batch) const;
  std::vector<int> predict(const torch::Tensor& batch) const;
  double accuracy(const torch::Tensor& images, const std::vector<int>& labels) const;

 private:
  ClassifierSpec spec_;
  ClassifierNet net_;
};

struct LabeledImages {
  torch::Tensor images;  // NCHW
  std::vector<int> labels;
};

struct ClassifierTraining {
  Classifier classifier;
  double heldout_accuracy = 0;
  std::int64_t train_count = 0;
  std::int64_t heldout_count = 0;
  std::vector<std::string> label_map;
};

/// Seeded split into train / held-out, then cross-entropy training.
/// Throws ConfigError when a class has fewer than min_examples_per_class
/// training examples.
ClassifierTraining train_classifier(const LabeledImages& data, const ClassifierSpec& spec,
                                    std::vector<std::string> label_map = {});

/// classifier.bin plus classifier.json (spec, label map, held-out accuracy).
void save_classifier(const std::filesystem::path& dir, const ClassifierTraining& trained);
ClassifierTraining load_classifier(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Presence metric

using BatchClassifier = std::function<std::vector<int>(const torch::Tensor&)>;

struct TransitionReport {
  struct Stage {
    std::string label;
    int expected_class = 0;
    std::vector<std::int64_t> histogram;
    double hit_rate = 0;
    /// transitions[a][b]: images predicted a at the previous stage and b here.
    std::vector<std::vector<std::int64_t>> transitions;
  };

  std::vector<std::string> label_map;
  std::int64_t batch_size = 0;
  std::int64_t gated_out = 0;
  std::int64_t kept = 0;
  bool empty = false;
  std::vector<Stage> stages;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Classifies the originals, drops those not predicted as expected_classes[0],
/// then runs the chain on the rest and classifies every stage.
TransitionReport presence_metric(const TranslatorSource& source, const BatchClassifier& classify,
                                 const torch::Tensor& source_batch, const ChainSpec& chain,
                                 const std::vector<int>& expected_classes, const std::vector<std::string>& label_map);

std::vector<std::string> celeba_experiment_two_label_map();

}  // namespace polytrans
