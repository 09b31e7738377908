#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "fixtures.hpp"
#include "polytrans/composer.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/evaluator.hpp"
#include "polytrans/objective.hpp"
#include "polytrans/synthetic.hpp"

using namespace polytrans;
namespace fs = std::filesystem;

namespace {

LabeledImages labeled(const std::vector<SyntheticSample>& samples) {
  LabeledImages out;
  std::vector<torch::Tensor> images;
  for (const auto& s : samples) {
    images.push_back(s.image);
    out.labels.push_back(combination_class(s.color, s.texture));
  }
  out.images = torch::stack(images);
  return out;
}

NetworkSet identity_net() {
  ModelConfig c;
  c.architecture = "identity";
  c.image_size = 4;
  c.discriminator_scales = 1;
  return fixtures::make_net(c);
}

// The class is written into the first pixel so a classifier can be a lookup.
torch::Tensor tagged_batch(const std::vector<int>& classes) {
  auto x = torch::zeros({static_cast<std::int64_t>(classes.size()), 3, 4, 4});
  for (std::size_t i = 0; i < classes.size(); ++i) x[i][0][0][0] = 0.1 * classes[i];
  return x;
}

std::vector<int> read_tags(const torch::Tensor& x) {
  std::vector<int> out;
  for (std::int64_t i = 0; i < x.size(0); ++i) out.push_back(static_cast<int>(std::lround(x[i][0][0][0].item<double>() * 10)));
  return out;
}

ClassifierSpec quick_spec() {
  ClassifierSpec s;
  s.steps = 300;
  s.seed = 4;
  return s;
}

}  // namespace

TEST_CASE("the oracle agrees with generator labels") {
  const auto samples = synth_generate(1000, all_combinations(), 77);
  int agree = 0;
  for (const auto& s : samples) {
    const auto v = synthetic_oracle(s.image);
    agree += v.color == (s.color == ShapeColor::red ? OracleColor::red : OracleColor::blue) &&
             v.texture == (s.texture == ShapeTexture::plain ? OracleTexture::plain : OracleTexture::striped);
  }
  CHECK(agree == 1000);
}

TEST_CASE("oracle verdicts on hand-made canvases") {
  auto red = torch::full({3, 32, 32}, -1.0);
  red[0].fill_(1.0);
  CHECK(synthetic_oracle(red) == OracleVerdict{OracleColor::red, OracleTexture::plain});
  CHECK(oracle_statistics(red).hue_difference == doctest::Approx(2.0));

  CHECK(synthetic_oracle(torch::zeros({3, 32, 32})) == OracleVerdict{OracleColor::indeterminate, OracleTexture::plain});

  auto stripes = torch::zeros({3, 32, 32});
  stripes[2].fill_(0.5);
  for (int y = 0; y < 32; y += kStripePeriod) stripes.narrow(1, y, kStripePeriod / 2).fill_(-0.8);
  CHECK(synthetic_oracle(stripes).texture == OracleTexture::striped);

  CHECK_THROWS_AS(synthetic_oracle(torch::zeros({1, 32, 32})), ContractError);
  CHECK(synthetic_oracle(torch::full({3, 8, 8}, NAN)).texture == OracleTexture::indeterminate);
  OracleConfig bad;
  bad.hue_margin = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cycle metric is the cycle reconstruction without noise") {
  const auto net = fixtures::make_net(fixtures::small_config());
  const JointTranslators source(net);
  const auto x = fixtures::random_batches(net.config(), 50, 3)[0];
  const double metric = cycle_consistency_metric(source, {0, 1}, x);
  const double direct = cycle_loss(net, 0, 1, x, {}, NoiseSpec{false, 0}).recon.item<double>();
  CHECK(metric == doctest::Approx(direct).epsilon(1e-6));
  CHECK(cycle_consistency_metric(source, {0, 1}, x) == metric);
  CHECK(cycle_consistency_metric(source, {0, 1}, x, 10) ==
        doctest::Approx(cycle_loss(net, 0, 1, x.narrow(0, 0, 10), {}, NoiseSpec{false, 0}).recon.item<double>()));

  const JointTranslators identity(identity_net());
  CHECK(cycle_consistency_metric(identity, {2, 3}, torch::rand({7, 3, 4, 4})) == 0.0);
  CHECK_THROWS_AS(cycle_consistency_metric(source, {0, 1}, x.narrow(0, 0, 0)), ContractError);
}

TEST_CASE("classifier separates the four synthetic combinations") {
  const auto trained = train_classifier(labeled(synth_generate(800, all_combinations(), 1)), quick_spec(),
                                        synthetic_label_map());
  CHECK(trained.heldout_accuracy >= 0.99);
  CHECK(trained.train_count == 640);
  CHECK(trained.heldout_count == 160);

  const auto fresh = labeled(synth_generate(400, all_combinations(), 2));
  CHECK(trained.classifier.accuracy(fresh.images, fresh.labels) >= 0.99);

  const auto dir = fs::temp_directory_path() / "polytrans_classifier";
  fs::remove_all(dir);
  save_classifier(dir, trained);
  const auto loaded = load_classifier(dir);
  CHECK(loaded.label_map == synthetic_label_map());
  CHECK(loaded.heldout_accuracy == trained.heldout_accuracy);
  CHECK(loaded.classifier.predict(fresh.images) == trained.classifier.predict(fresh.images));
  fs::remove_all(dir);
}

TEST_CASE("shuffled labels leave the classifier at chance") {
  auto data = labeled(synth_generate(800, all_combinations(), 5));
  std::mt19937_64 rng(9);
  std::shuffle(data.labels.begin(), data.labels.end(), rng);
  const auto trained = train_classifier(data, quick_spec(), synthetic_label_map());
  CHECK(trained.heldout_accuracy == doctest::Approx(0.25).epsilon(0.2));
}

TEST_CASE("a starved class is rejected by name") {
  auto samples = synth_generate(400, {{ShapeColor::red, ShapeTexture::plain}, {ShapeColor::blue, ShapeTexture::plain},
                                      {ShapeColor::red, ShapeTexture::striped}},
                                3);
  samples.push_back(synth_generate(1, {{ShapeColor::blue, ShapeTexture::striped}}, 4).front());
  try {
    train_classifier(labeled(samples), quick_spec(), synthetic_label_map());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("Blue & Striped") != std::string::npos);
  }
  ClassifierSpec s;
  s.architecture = "resnet";
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(ClassifierSpec::from_json({{"layers", 3}}), ConfigError);
  CHECK(ClassifierSpec::from_json(quick_spec().to_json()).to_json() == quick_spec().to_json());
}

TEST_CASE("vgg11 classifier produces one logit per class") {
  ClassifierSpec s;
  s.architecture = "vgg11";
  const Classifier clf(s);
  CHECK(clf.logits(torch::zeros({2, 3, 32, 32})).sizes() == torch::IntArrayRef{2, 4});
}

TEST_CASE("presence gating drops misclassified originals") {
  const JointTranslators source(identity_net());
  std::vector<int> classes(87, 0);
  classes.insert(classes.end(), 13, 1);
  const auto chain = parse_chain("1>2,3>4", fixtures::names(4));
  const auto labels = synthetic_label_map();
  const auto report = presence_metric(source, read_tags, tagged_batch(classes), chain, {0, 1, 3}, labels);
  CHECK(report.batch_size == 100);
  CHECK(report.gated_out == 13);
  CHECK(report.kept == 87);
  REQUIRE(report.stages.size() == 3);
  CHECK(report.stages[0].hit_rate == 1.0);
  // The identity model never changes the tag, so later stages all stay in class 0.
  for (std::size_t k = 1; k < report.stages.size(); ++k) {
    const auto& s = report.stages[k];
    std::int64_t total = 0;
    for (auto c : s.histogram) total += c;
    CHECK(total == report.kept);
    for (std::size_t a = 0; a < labels.size(); ++a) {
      std::int64_t row = 0;
      for (auto v : s.transitions[a]) row += v;
      CHECK(row == report.stages[k - 1].histogram[a]);
    }
    CHECK(s.hit_rate == static_cast<double>(s.histogram[s.expected_class]) / static_cast<double>(report.kept));
  }
  CHECK(report.stages[1].histogram[0] == 87);
  CHECK(report.stages[1].hit_rate == 0.0);
  CHECK(report.stages[2].label == "striped>plain");
}

TEST_CASE("an all-gated batch gives an empty report") {
  const JointTranslators source(identity_net());
  const auto report = presence_metric(source, read_tags, tagged_batch(std::vector<int>(10, 2)),
                                      parse_chain("1>2", fixtures::names(4)), {0, 1}, synthetic_label_map());
  CHECK(report.empty);
  CHECK(report.kept == 0);
  CHECK(report.gated_out == 10);
  REQUIRE(report.stages.size() == 2);
  for (const auto& s : report.stages) {
    CHECK(s.hit_rate == 0.0);
    CHECK(std::all_of(s.histogram.begin(), s.histogram.end(), [](auto c) { return c == 0; }));
  }
  CHECK(report.to_json()["n"] == 0);
  CHECK_THROWS_AS(presence_metric(source, read_tags, tagged_batch({0}), parse_chain("1>2", fixtures::names(4)), {0},
                                  synthetic_label_map()),
                  ContractError);
}

TEST_CASE("the hair and smile label map renders in reports") {
  const auto labels = celeba_experiment_two_label_map();
  CHECK(labels[0] == "Blonde & Not Smiling");
  CHECK(labels[1] == "Brunette & Not Smiling");
  CHECK(labels[2] == "Blonde & Smiling");
  CHECK(labels[3] == "Brunette & Smiling");
  const JointTranslators source(identity_net());
  const auto report = presence_metric(source, read_tags, tagged_batch({1, 1, 0}), parse_chain("", fixtures::names(4)),
                                      {1}, labels);
  const auto j = report.to_json();
  CHECK(j["label_map"]["0"] == "Blonde & Not Smiling");
  CHECK(j["label_map"]["3"] == "Brunette & Smiling");
  CHECK(report.table().find("3: Brunette & Smiling") != std::string::npos);
  CHECK(report.stages[0].histogram[1] == 2);
}
