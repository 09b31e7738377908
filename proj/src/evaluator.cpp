#include "polytrans/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "polytrans/checkpoint.hpp"
#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/optimizer.hpp"
#include "polytrans/synthetic.hpp"

namespace polytrans {

namespace fs = std::filesystem;
namespace nn = torch::nn;

std::string to_string(OracleColor c) {
  switch (c) {
    case OracleColor::red: return "red";
    case OracleColor::blue: return "blue";
    default: return "indeterminate";
  }
}

std::string to_string(OracleTexture t) {
  switch (t) {
    case OracleTexture::plain: return "plain";
    case OracleTexture::striped: return "striped";
    default: return "indeterminate";
  }
}

void OracleConfig::validate() const {
  if (!(hue_margin > 0) || !(stripe_threshold > 0)) throw ConfigError("oracle thresholds must be positive");
}

nlohmann::json OracleConfig::to_json() const {
  return {{"hue_margin", hue_margin}, {"stripe_threshold", stripe_threshold}};
}

OracleStatistics oracle_statistics(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3 || image.size(1) < 2) {
    throw ContractError("oracle expects a 3 x H x W image");
  }
  const auto img = image.to(torch::kFloat64).contiguous();
  const auto acc = img.accessor<double, 3>();
  const std::int64_t h = img.size(1), w = img.size(2);

  OracleStatistics s;
  double red = 0, blue = 0;
  std::vector<double> rows(static_cast<std::size_t>(h), 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      red += acc[0][y][x];
      blue += acc[2][y][x];
      rows[y] += acc[0][y][x] + acc[1][y][x] + acc[2][y][x];
    }
    rows[y] /= static_cast<double>(3 * w);
  }
  s.hue_difference = (red - blue) / static_cast<double>(h * w);

  std::complex<double> band{0, 0};
  for (std::int64_t y = 0; y + 1 < h; ++y) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(y) / kStripePeriod;
    band += (rows[y + 1] - rows[y]) * std::polar(1.0, angle);
  }
  s.stripe_energy = 2.0 * std::abs(band) / static_cast<double>(h - 1);
  return s;
}

OracleVerdict synthetic_oracle(const torch::Tensor& image, const OracleConfig& cfg) {
  const auto s = oracle_statistics(image);
  OracleVerdict v;
  if (s.hue_difference > cfg.hue_margin) {
    v.color = OracleColor::red;
  } else if (s.hue_difference < -cfg.hue_margin) {
    v.color = OracleColor::blue;
  }
  if (std::isfinite(s.stripe_energy)) {
    v.texture = s.stripe_energy >= cfg.stripe_threshold ? OracleTexture::striped : OracleTexture::plain;
  }
  return v;
}

// ---------------------------------------------------------------------------

double cycle_consistency_metric(const TranslatorSource& source, Translator pair, const torch::Tensor& images,
                                std::int64_t sample_size) {
  if (images.dim() != 4) throw ContractError("cycle metric expects an NCHW batch");
  const std::int64_t n = sample_size > 0 ? std::min(sample_size, images.size(0)) : images.size(0);
  if (n == 0) throw ContractError("cycle metric: empty sample");
  const Translator back{pair.target, pair.source};
  torch::NoGradGuard no_grad;
  double total = 0;
  constexpr std::int64_t kChunk = 64;
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const auto x = images.slice(0, start, std::min(n, start + kChunk));
    const auto round_trip = source.translate(back, source.translate(pair, x, false), false);
    total += (round_trip.to(x.scalar_type()) - x).abs().to(torch::kFloat64).sum().item<double>();
  }
  return total / static_cast<double>(n * images[0].numel());
}

// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& classifier_keys() {
  static const std::set<std::string> keys{"num_classes", "architecture",   "image_size",
                                          "channels",    "train_fraction", "steps",
                                          "batch_size",  "learning_rate",  "min_examples_per_class",
                                          "seed"};
  return keys;
}

}  // namespace

void ClassifierSpec::validate() const {
  if (num_classes < 2) throw ConfigError("classifier needs at least two classes");
  if (architecture != "tiny" && architecture != "vgg11") {
    throw ConfigError("classifier architecture must be tiny or vgg11, got '" + architecture + "'");
  }
  if (architecture == "vgg11" && image_size % 32 != 0) throw ConfigError("vgg11 needs an image size divisible by 32");
  if (architecture == "tiny" && image_size % 4 != 0) throw ConfigError("tiny classifier needs an image size divisible by 4");
  if (channels != 1 && channels != 3) throw ConfigError("classifier channels must be 1 or 3");
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("train_fraction must be in (0, 1)");
  if (steps < 1 || batch_size < 1) throw ConfigError("classifier steps and batch_size must be positive");
  if (!(learning_rate > 0)) throw ConfigError("classifier learning_rate must be positive");
  if (min_examples_per_class < 1) throw ConfigError("min_examples_per_class must be positive");
}

nlohmann::json ClassifierSpec::to_json() const {
  return {{"num_classes", num_classes},       {"architecture", architecture},
          {"image_size", image_size},         {"channels", channels},
          {"train_fraction", train_fraction}, {"steps", steps},
          {"batch_size", batch_size},         {"learning_rate", learning_rate},
          {"min_examples_per_class", min_examples_per_class}, {"seed", seed}};
}

ClassifierSpec ClassifierSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("classifier spec must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!classifier_keys().count(key)) throw ConfigError("unknown classifier key '" + key + "'");
  }
  ClassifierSpec s;
  try {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.architecture = j.value("architecture", s.architecture);
    s.image_size = j.value("image_size", s.image_size);
    s.channels = j.value("channels", s.channels);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.steps = j.value("steps", s.steps);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.min_examples_per_class = j.value("min_examples_per_class", s.min_examples_per_class);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("classifier spec: ") + e.what());
  }
  s.validate();
  return s;
}

ClassifierNetImpl::ClassifierNetImpl(const ClassifierSpec& spec) {
  features = nn::Sequential();
  head = nn::Sequential();
  auto conv = [](int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)); };
  if (spec.architecture == "vgg11") {
    // 8 convolutions and 3 fully connected layers.
    const std::vector<int> plan{64, -1, 128, -1, 256, 256, -1, 512, 512, -1, 512, 512, -1};
    int in = spec.channels;
    for (int width : plan) {
      if (width < 0) {
        features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
      } else {
        features->push_back(conv(in, width));
        features->push_back(nn::ReLU());
        in = width;
      }
    }
    const int side = spec.image_size / 32;
    head->push_back(nn::Flatten());
    head->push_back(nn::Linear(512 * side * side, 512));
    head->push_back(nn::ReLU());
    head->push_back(nn::Linear(512, 512));
    head->push_back(nn::ReLU());
    head->push_back(nn::Linear(512, spec.num_classes));
  } else {
    features->push_back(conv(spec.channels, 16));
    features->push_back(nn::ReLU());
    features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    features->push_back(conv(16, 32));
    features->push_back(nn::ReLU());
    features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    features->push_back(conv(32, 32));
    features->push_back(nn::ReLU());
    head->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
    head->push_back(nn::Flatten());
    head->push_back(nn::Linear(32, spec.num_classes));
  }
  register_module("features", features);
  register_module("head", head);
}

torch::Tensor ClassifierNetImpl::forward(const torch::Tensor& x) { return head->forward(features->forward(x)); }

Classifier::Classifier(ClassifierSpec spec) : spec_(std::move(spec)), net_(nullptr) {
  spec_.validate();
  torch::manual_seed(spec_.seed);
  net_ = ClassifierNet(spec_);
}

NamedTensors Classifier::named_parameters() const {
  NamedTensors out;
  for (const auto& p : net_.ptr()->named_parameters()) out.emplace_back(p.key(), p.value());
  return out;
}

torch::Tensor Classifier::logits(const torch::Tensor& batch) const {
  const auto x = batch.dim() == 3 ? batch.unsqueeze(0) : batch;
  if (x.dim() != 4 || x.size(1) != spec_.channels || x.size(2) != spec_.image_size || x.size(3) != spec_.image_size) {
    throw ContractError("classifier input does not match its spec");
  }
  return net_.ptr()->forward(x.to(torch::kFloat32));
}

std::vector<int> Classifier::predict(const torch::Tensor& batch) const {
  torch::NoGradGuard no_grad;
  std::vector<int> out;
  const auto x = batch.dim() == 3 ? batch.unsqueeze(0) : batch;
  constexpr std::int64_t kChunk = 128;
  for (std::int64_t start = 0; start < x.size(0); start += kChunk) {
    const auto pred = logits(x.slice(0, start, std::min(x.size(0), start + kChunk))).argmax(1).to(torch::kInt64);
    const auto acc = pred.accessor<std::int64_t, 1>();
    for (std::int64_t i = 0; i < pred.size(0); ++i) out.push_back(static_cast<int>(acc[i]));
  }
  return out;
}

double Classifier::accuracy(const torch::Tensor& images, const std::vector<int>& labels) const {
  if (labels.empty()) return 0.0;
  const auto pred = predict(images);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassifierTraining train_classifier(const LabeledImages& data, const ClassifierSpec& spec,
                                    std::vector<std::string> label_map) {
  spec.validate();
  const std::int64_t n = data.images.size(0);
  if (data.images.dim() != 4 || static_cast<std::size_t>(n) != data.labels.size()) {
    throw ContractError("train_classifier: images and labels disagree");
  }
  for (int label : data.labels) {
    if (label < 0 || label >= spec.num_classes) throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  if (label_map.empty()) {
    for (int c = 0; c < spec.num_classes; ++c) label_map.push_back(std::to_string(c));
  }
  if (static_cast<int>(label_map.size()) != spec.num_classes) throw ConfigError("label map size differs from num_classes");

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(spec.seed, 0xC1A5));
  std::shuffle(order.begin(), order.end(), rng);
  const auto train_n = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(spec.train_fraction * n)), 1, n);
  std::vector<std::int64_t> train_idx(order.begin(), order.begin() + train_n);
  std::vector<std::int64_t> held_idx(order.begin() + train_n, order.end());

  std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
  for (auto i : train_idx) ++counts[data.labels[i]];
  for (int c = 0; c < spec.num_classes; ++c) {
    if (counts[c] < spec.min_examples_per_class) {
      throw ConfigError("class " + std::to_string(c) + " (" + label_map[c] + ") has " + std::to_string(counts[c]) +
                        " training examples, needs " + std::to_string(spec.min_examples_per_class));
    }
  }

  ClassifierTraining out{Classifier(spec), 0, train_n, static_cast<std::int64_t>(held_idx.size()), label_map};
  auto& clf = out.classifier;
  clf.net()->train();
  std::vector<torch::Tensor> params;
  for (const auto& p : clf.net()->parameters()) params.push_back(p);
  Adam adam(params, AdamConfig{spec.learning_rate, 0.9, 0.999, 1e-8});

  const auto images = data.images.to(torch::kFloat32);
  const auto labels = torch::tensor(std::vector<std::int64_t>(data.labels.begin(), data.labels.end()));
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  for (int step = 0; step < spec.steps; ++step) {
    std::mt19937_64 step_rng(mix_seed(spec.seed, 0xBA7C, static_cast<std::uint64_t>(step)));
    std::vector<std::int64_t> batch(static_cast<std::size_t>(spec.batch_size));
    for (auto& b : batch) b = train_idx[pick(step_rng)];
    const auto index = torch::tensor(batch);
    const auto loss = torch::nn::functional::cross_entropy(clf.logits(images.index_select(0, index)),
                                                           labels.index_select(0, index));
    if (!std::isfinite(loss.item<double>())) throw NumericalError("classifier", "non-finite classifier loss");
    adam.step(torch::autograd::grad({loss}, params));
  }
  clf.net()->eval();

  if (!held_idx.empty()) {
    const auto index = torch::tensor(held_idx);
    std::vector<int> held_labels;
    for (auto i : held_idx) held_labels.push_back(data.labels[i]);
    out.heldout_accuracy = clf.accuracy(images.index_select(0, index), held_labels);
  }
  return out;
}

void save_classifier(const fs::path& dir, const ClassifierTraining& trained) {
  fs::create_directories(dir);
  write_parameter_blob(dir / "classifier.bin", trained.classifier.named_parameters());
  const nlohmann::json manifest{{"spec", trained.classifier.spec().to_json()},
                                {"label_map", trained.label_map},
                                {"heldout_accuracy", trained.heldout_accuracy},
                                {"train_count", trained.train_count},
                                {"heldout_count", trained.heldout_count},
                                {"blob_sha256", sha256_file((dir / "classifier.bin").string())}};
  write_file_atomic(dir / "classifier.json", manifest.dump(2) + "\n");
}

ClassifierTraining load_classifier(const fs::path& dir) {
  std::ifstream in(dir / "classifier.json");
  if (!in) throw IoError("cannot read " + (dir / "classifier.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("classifier.json: " + std::string(e.what()));
  }
  const auto spec = ClassifierSpec::from_json(j.at("spec"));
  if (sha256_file((dir / "classifier.bin").string()) != j.at("blob_sha256").get<std::string>()) {
    throw FormatError("classifier.bin does not match its manifest hash");
  }
  ClassifierTraining out{Classifier(spec), j.at("heldout_accuracy").get<double>(), j.at("train_count").get<std::int64_t>(),
                         j.at("heldout_count").get<std::int64_t>(), j.at("label_map").get<std::vector<std::string>>()};
  torch::NoGradGuard no_grad;
  assign_parameters(out.classifier.named_parameters(), read_parameter_blob(dir / "classifier.bin"), "classifier");
  out.classifier.net()->eval();
  return out;
}

// ---------------------------------------------------------------------------

TransitionReport presence_metric(const TranslatorSource& source, const BatchClassifier& classify,
                                 const torch::Tensor& source_batch, const ChainSpec& chain,
                                 const std::vector<int>& expected_classes, const std::vector<std::string>& label_map) {
  if (expected_classes.size() != chain.steps.size() + 1) {
    throw ContractError("presence_metric: expected_classes needs one entry per stage");
  }
  if (source_batch.dim() != 4) throw ContractError("presence_metric expects an NCHW batch");
  const int classes = static_cast<int>(label_map.size());
  for (int c : expected_classes) {
    if (c < 0 || c >= classes) throw ContractError("presence_metric: expected class outside the label map");
  }
  auto check = [&](const std::vector<int>& pred, std::int64_t n) {
    if (static_cast<std::int64_t>(pred.size()) != n) throw ContractError("classifier returned the wrong count");
    for (int p : pred) {
      if (p < 0 || p >= classes) throw ContractError("classifier predicted a class outside the label map");
    }
  };

  TransitionReport report;
  report.label_map = label_map;
  report.batch_size = source_batch.size(0);

  const auto original = classify(source_batch);
  check(original, report.batch_size);
  std::vector<std::int64_t> keep;
  for (std::int64_t i = 0; i < report.batch_size; ++i) {
    if (original[i] == expected_classes[0]) keep.push_back(i);
  }
  report.kept = static_cast<std::int64_t>(keep.size());
  report.gated_out = report.batch_size - report.kept;
  report.empty = keep.empty();

  auto stage_of = [&](const std::string& label, int expected, const std::vector<int>& pred,
                      const std::vector<int>* previous) {
    TransitionReport::Stage s;
    s.label = label;
    s.expected_class = expected;
    s.histogram.assign(classes, 0);
    s.transitions.assign(classes, std::vector<std::int64_t>(classes, 0));
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ++s.histogram[pred[i]];
      hits += pred[i] == expected;
      if (previous) ++s.transitions[(*previous)[i]][pred[i]];
    }
    s.hit_rate = pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
    return s;
  };

  std::vector<int> previous;
  for (auto i : keep) previous.push_back(original[i]);
  report.stages.push_back(stage_of("original", expected_classes[0], previous, nullptr));
  if (report.empty) {
    for (std::size_t k = 0; k < chain.steps.size(); ++k) {
      const auto& st = chain.steps[k];
      report.stages.push_back(stage_of(source.domain_names().at(st.source) + ">" + source.domain_names().at(st.target),
                                       expected_classes[k + 1], {}, nullptr));
    }
    return report;
  }

  const auto kept = source_batch.index_select(0, torch::tensor(keep));
  const auto trace = apply_chain(source, chain, kept);
  for (std::size_t k = 1; k < trace.images.size(); ++k) {
    const auto pred = classify(trace.images[k]);
    check(pred, report.kept);
    report.stages.push_back(stage_of(trace.step_labels[k], expected_classes[k], pred, &previous));
    previous = pred;
  }
  return report;
}

nlohmann::json TransitionReport::to_json() const {
  nlohmann::json labels = nlohmann::json::object();
  for (std::size_t c = 0; c < label_map.size(); ++c) labels[std::to_string(c)] = label_map[c];
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stages) {
    st.push_back({{"label", s.label},
                  {"expected_class", s.expected_class},
                  {"histogram", s.histogram},
                  {"hit_rate", s.hit_rate},
                  {"transitions", s.transitions}});
  }
  return {{"label_map", labels}, {"batch_size", batch_size}, {"gated_out", gated_out},
          {"n", kept},           {"empty", empty},           {"stages", st}};
}

std::string TransitionReport::table() const {
  std::ostringstream out;
  for (std::size_t c = 0; c < label_map.size(); ++c) out << c << ": " << label_map[c] << "\n";
  out << "batch " << batch_size << ", gated out " << gated_out << ", n=" << kept;
  if (empty) out << " (empty after gating)";
  out << "\n";
  out << std::left << std::setw(24) << "stage" << std::setw(10) << "expected";
  for (std::size_t c = 0; c < label_map.size(); ++c) out << std::right << std::setw(7) << c;
  out << std::setw(10) << "hit" << "\n";
  for (const auto& s : stages) {
    out << std::left << std::setw(24) << s.label << std::setw(10) << s.expected_class;
    for (auto count : s.histogram) out << std::right << std::setw(7) << count;
    out << std::setw(10) << std::fixed << std::setprecision(3) << s.hit_rate << "\n";
  }
  return out.str();
}

std::vector<std::string> celeba_experiment_two_label_map() {
  return {"Blonde & Not Smiling", "Brunette & Not Smiling", "Blonde & Smiling", "Brunette & Smiling"};
}

}  // namespace polytrans
