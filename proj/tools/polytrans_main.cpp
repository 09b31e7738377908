// polytrans: data preparation, training, composition and evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "polytrans/checkpoint.hpp"
#include "polytrans/composer.hpp"
#include "polytrans/config.hpp"
#include "polytrans/dataset.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/evaluator.hpp"
#include "polytrans/image.hpp"
#include "polytrans/synthetic.hpp"
#include "polytrans/trainer.hpp"

namespace fs = std::filesystem;
using namespace polytrans;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kDiverged = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
};

struct PrepareArgs {
  std::string attributes, images, experiment;
  bool dry_run = false;
};

struct SynthArgs {
  std::optional<int> count;
};

struct TrainArgs {
  std::string regime = "pair";
  std::string pair;
  std::vector<std::string> from;
  std::optional<std::int64_t> steps;
  std::string resume;
  std::string data;
};

struct ComposeArgs {
  std::vector<std::string> checkpoints;
  std::string chain;
  std::vector<std::string> inputs;
  std::string save_intermediates;
  bool noise = false;
};

struct EvaluateArgs {
  std::string metric = "cycle";
  std::vector<std::string> checkpoints;
  std::string pair;
  std::string data;
  std::vector<std::string> inputs;
  std::int64_t sample_size = 0;
  std::string classifier;
  std::string chain;
  std::string expected;
  std::optional<int> synthetic;
};

struct ClassifierArgs {
  std::string data;
  std::optional<int> synthetic;
  std::optional<int> steps;
  std::string architecture;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

/// Domain folders written by prepare-data or synth-data.
std::vector<DomainImages> load_prepared(const fs::path& root, int image_size,
                                        const std::vector<std::string>& only = {}) {
  const auto manifest = read_json(root / "manifest.json");
  const auto spec = DomainSpec::from_json(manifest.at("spec"));
  std::vector<DomainImages> out;
  for (const auto& name : spec.domain_names) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    out.push_back({name, load_image_folder(root / name, image_size)});
    std::cerr << "loaded " << out.back().images.size(0) << " images for " << name << "\n";
  }
  return out;
}

DomainSpec prepared_spec(const fs::path& root) {
  return DomainSpec::from_json(read_json(root / "manifest.json").at("spec"));
}

torch::Tensor load_inputs(const std::vector<std::string>& inputs, int image_size, std::vector<std::string>* stems) {
  std::vector<torch::Tensor> images;
  for (const auto& input : inputs) {
    if (fs::is_directory(input)) {
      std::vector<std::string> s;
      auto batch = load_image_folder(input, image_size, &s);
      for (std::int64_t i = 0; i < batch.size(0); ++i) images.push_back(batch[i]);
      stems->insert(stems->end(), s.begin(), s.end());
    } else {
      images.push_back(load_image(input, image_size));
      stems->push_back(fs::path(input).stem().string());
    }
  }
  if (images.empty()) throw ConfigError("no input images");
  return torch::stack(images);
}

std::unique_ptr<TranslatorSource> load_source(const std::vector<std::string>& checkpoints) {
  if (checkpoints.empty()) throw ConfigError("--checkpoint is required");
  if (checkpoints.size() == 1) return std::make_unique<JointTranslators>(load_checkpoint(checkpoints[0]).net);
  std::vector<NetworkSet> models;
  for (const auto& c : checkpoints) models.push_back(load_checkpoint(c).net);
  return std::make_unique<SeparateTranslators>(std::move(models));
}

/// Class of an image under a 2-pair spec: position within the first pair,
/// plus 2 when it belongs to the first domain of the second pair. Images not
/// in exactly one domain of each pair get no class.
std::optional<int> combination_of(const std::vector<bool>& member, const DomainSpec& spec) {
  const auto [a0, a1] = spec.pairing.at(0);
  const auto [b0, b1] = spec.pairing.at(1);
  if (member[a0] == member[a1] || member[b0] == member[b1]) return std::nullopt;
  return (member[a0] ? 0 : 1) + (member[b0] ? 2 : 0);
}

std::vector<std::string> combination_label_map(const DataConfig& data, const DomainSpec& spec) {
  if (data.experiment == "synthetic") return synthetic_label_map();
  if (data.experiment == "experiment_two") return celeba_experiment_two_label_map();
  const auto& n = spec.domain_names;
  const auto [a0, a1] = spec.pairing.at(0);
  const auto [b0, b1] = spec.pairing.at(1);
  return {n[a0] + " & " + n[b1], n[a1] + " & " + n[b1], n[a0] + " & " + n[b0], n[a1] + " & " + n[b0]};
}

LabeledImages synthetic_labeled(int count, std::uint64_t seed, int image_size) {
  LabeledImages out;
  std::vector<torch::Tensor> images;
  for (const auto& s : synth_generate(count, all_combinations(), seed, image_size)) {
    images.push_back(s.image);
    out.labels.push_back(combination_class(s.color, s.texture));
  }
  out.images = torch::stack(images);
  return out;
}

LabeledImages attribute_labeled(const DataConfig& data, int image_size) {
  if (data.attributes.empty() || data.images.empty()) {
    throw ConfigError("classifier data needs --synthetic or data.attributes and data.images");
  }
  const auto spec = data.domain_spec();
  const auto index = load_attribute_index(data.attributes);
  std::vector<std::vector<std::size_t>> slots;
  for (const auto& p : spec.predicates) slots.push_back(p.bind(index.attribute_names));
  LabeledImages out;
  std::vector<torch::Tensor> images;
  std::size_t taken = 0;
  for (const auto& e : index.entries) {
    std::vector<bool> member;
    for (std::size_t d = 0; d < spec.num_domains(); ++d) member.push_back(spec.predicates[d].evaluate_bound(e.attributes, slots[d]));
    const auto cls = combination_of(member, spec);
    if (!cls) continue;
    if (data.max_per_domain && taken >= data.max_per_domain) break;
    images.push_back(load_image(data.images / e.image_id, image_size));
    out.labels.push_back(*cls);
    ++taken;
  }
  if (images.empty()) throw ConfigError("no labelled images found");
  out.images = torch::stack(images);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_prepare_data(const Globals& g, RunConfig cfg, const PrepareArgs& a, RunManifest& rm) {
  if (!a.attributes.empty()) cfg.data.attributes = a.attributes;
  if (!a.images.empty()) cfg.data.images = a.images;
  if (!a.experiment.empty()) cfg.data.experiment = a.experiment;
  if (cfg.data.attributes.empty()) throw ConfigError("prepare-data needs --attributes");
  const auto spec = cfg.data.domain_spec();
  const auto index = load_attribute_index(cfg.data.attributes);
  const auto sets = build_marginal_sets(index, spec, cfg.data.build_options());
  const auto violations = count_exclusion_violations(index, spec, sets);
  const auto manifest = dataset_manifest(spec, sets, violations, cfg.data.build_options());
  for (const auto& d : sets.domains) {
    std::cout << d.name << ": " << d.count() << " (train " << d.train.size() << ", eval " << d.eval.size() << ")\n";
  }
  std::cout << "exclusion violations: " << violations << "\n";
  rm.inputs = {cfg.data.attributes.string(), cfg.data.images.string()};
  if (a.dry_run) return kOk;

  const auto out = require_out(g);
  if (cfg.data.images.empty() || !fs::is_directory(cfg.data.images)) {
    throw IoError("image root '" + cfg.data.images.string() + "' does not exist");
  }
  for (const auto& d : sets.domains) {
    for (const auto* list : {&d.train, &d.eval}) {
      const fs::path sub = list == &d.train ? out / d.name : out / "eval" / d.name;
      fs::create_directories(sub);
      std::ofstream ids(sub / "ids.txt");
      for (const auto& id : *list) {
        ids << id << "\n";
        write_png(sub / (fs::path(id).stem().string() + ".png"),
                  to_u8(load_image(cfg.data.images / id, cfg.model.image_size)));
      }
    }
  }
  write_json(out / "manifest.json", manifest);
  rm.outputs = {(out / "manifest.json").string()};
  return kOk;
}

int cmd_synth_data(const Globals& g, RunConfig cfg, const SynthArgs& a, RunManifest& rm) {
  const auto out = require_out(g);
  const int count = a.count.value_or(cfg.data.synthetic_count);
  const auto spec = synthetic_domain_spec();
  std::set<Combination> allowed;
  for (const auto& c : all_combinations()) {
    if (!(c.first == ShapeColor::blue && c.second == ShapeTexture::striped)) allowed.insert(c);
  }
  const auto samples = synth_generate(count, allowed, cfg.train.seed, cfg.model.image_size);
  write_synthetic_dataset(out, samples, spec, cfg.data.build_options());
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  rm.outputs = {(out / "manifest.json").string(), (out / "labels.txt").string()};
  return kOk;
}

int cmd_train(const Globals& g, RunConfig cfg, const TrainArgs& a, RunManifest& rm) {
  const auto out = require_out(g);
  if (a.steps) cfg.train.steps = *a.steps;
  cfg.train.regime = parse_regime(a.regime);
  cfg.train.validate();
  const fs::path data_root = a.data.empty() ? cfg.data.root : fs::path(a.data);
  if (data_root.empty()) throw ConfigError("train needs --data or data.root");
  rm.effective_config = cfg.to_json();
  rm.inputs.push_back(data_root.string());

  RunOptions options;
  options.out_dir = out;
  options.deterministic = g.deterministic;
  options.on_step = [](std::int64_t step, const LossReport& r) {
    std::cout << nlohmann::json{{"step", step}, {"losses", r.to_json()}}.dump() << "\n";
  };

  std::optional<TrainOutput> result;
  if (!a.resume.empty()) {
    const auto ckpt = load_checkpoint(a.resume);
    rm.inputs.push_back(a.resume);
    auto state = resume_state(ckpt, cfg.train.adam);
    const auto data = load_prepared(data_root, ckpt.manifest.model.image_size, ckpt.manifest.domain_names);
    std::vector<torch::Tensor> tensors;
    for (const auto& name : ckpt.manifest.domain_names) {
      tensors.push_back(select_domains(data, {name}).front().images);
    }
    result = run_training(state, tensors, cfg.train, ckpt.manifest.regime, options);
  } else if (cfg.train.regime == Regime::pair) {
    const auto names = split_list(a.pair);
    if (names.size() != 2) throw ConfigError("--pair needs two domain names, e.g. --pair red,blue");
    const auto data = load_prepared(data_root, cfg.model.image_size, names);
    result = train_pair({names[0], names[1]}, data, cfg.model, cfg.train, options);
  } else if (cfg.train.regime == Regime::joint) {
    const auto spec = prepared_spec(data_root);
    auto model = cfg.model;
    model.num_domains = static_cast<int>(spec.num_domains());
    const auto data = load_prepared(data_root, model.image_size);
    result = train_joint(data, model, spec.pairing, cfg.train, std::nullopt, options);
  } else {
    if (a.from.size() != 2) throw ConfigError("warm start needs --from <pair checkpoint> <pair checkpoint>");
    const auto first = load_checkpoint(a.from[0]);
    const auto second = load_checkpoint(a.from[1]);
    rm.inputs.insert(rm.inputs.end(), a.from.begin(), a.from.end());
    auto names = first.manifest.domain_names;
    names.insert(names.end(), second.manifest.domain_names.begin(), second.manifest.domain_names.end());
    const auto data = load_prepared(data_root, first.manifest.model.image_size, names);
    result = warm_start_finetune(first, second, data, cfg.train, options);
  }
  std::cout << "completed " << result->steps_completed << " steps; checkpoint " << out.string() << "\n";
  rm.outputs = {(out / "manifest.json").string(), (out / "metrics.jsonl").string()};
  return kOk;
}

int cmd_compose(const Globals& g, const ComposeArgs& a, RunManifest& rm) {
  const auto out = require_out(g);
  const auto source = load_source(a.checkpoints);
  auto chain = parse_chain(a.chain, source->domain_names());
  chain.noise_enabled = a.noise;
  if (a.noise && g.seed) torch::manual_seed(*g.seed);
  std::vector<std::string> stems;
  const auto inputs = load_inputs(a.inputs, static_cast<int>(source->image_shape().at(1)), &stems);
  const auto trace = apply_chain(*source, chain, inputs);
  const auto rows = unbatch(trace);

  const fs::path grid_path = out.extension() == ".png" ? out : out / "grid.png";
  fs::create_directories(grid_path.parent_path().empty() ? fs::path(".") : grid_path.parent_path());
  render_grid(rows, grid_path);
  rm.outputs.push_back(grid_path.string());
  if (!a.save_intermediates.empty()) {
    fs::create_directories(a.save_intermediates);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t k = 1; k < rows[i].images.size(); ++k) {
        const auto path = fs::path(a.save_intermediates) / (stems[i] + ".step" + std::to_string(k) + ".png");
        write_png(path, to_u8(rows[i].images[k]));
      }
    }
    rm.outputs.push_back(a.save_intermediates);
  }
  rm.inputs = a.inputs;
  rm.inputs.insert(rm.inputs.end(), a.checkpoints.begin(), a.checkpoints.end());
  std::cout << rows.size() << " rows x " << trace.images.size() << " columns -> " << grid_path.string() << "\n";
  return kOk;
}

int cmd_evaluate(const Globals& g, RunConfig cfg, const EvaluateArgs& a, RunManifest& rm) {
  const auto out = require_out(g);
  fs::create_directories(out);
  const auto source = load_source(a.checkpoints);
  const int size = static_cast<int>(source->image_shape().at(1));
  nlohmann::json report;

  if (a.metric == "cycle") {
    const auto names = split_list(a.pair);
    if (names.size() != 2) throw ConfigError("--pair needs two domain names");
    const auto pair = parse_chain(names[0] + ">" + names[1], source->domain_names()).steps.front();
    torch::Tensor images;
    if (!a.inputs.empty()) {
      std::vector<std::string> stems;
      images = load_inputs(a.inputs, size, &stems);
    } else {
      const fs::path root = a.data.empty() ? cfg.data.root : fs::path(a.data);
      if (root.empty()) throw ConfigError("cycle metric needs --data or --inputs");
      const fs::path eval_dir = root / "eval" / names[0];
      images = load_image_folder(fs::is_directory(eval_dir) ? eval_dir : root / names[0], size);
    }
    const double value = cycle_consistency_metric(*source, pair, images, a.sample_size);
    report = {{"metric", "cycle"}, {"pair", names}, {"sample_size", std::min<std::int64_t>(
        a.sample_size > 0 ? a.sample_size : images.size(0), images.size(0))}, {"value", value}};
    std::cout << value << "\n";
  } else if (a.metric == "presence" || a.metric == "oracle") {
    const auto chain = parse_chain(a.chain, source->domain_names());
    torch::Tensor batch;
    if (a.synthetic) {
      batch = synthetic_labeled(*a.synthetic, g.seed.value_or(cfg.train.seed), size).images;
    } else {
      std::vector<std::string> stems;
      batch = load_inputs(a.inputs, size, &stems);
    }
    if (a.metric == "presence") {
      if (a.classifier.empty()) throw ConfigError("presence metric needs --classifier");
      const auto clf = load_classifier(a.classifier);
      std::vector<int> expected;
      for (const auto& e : split_list(a.expected)) expected.push_back(std::stoi(e));
      const auto r = presence_metric(
          *source, [&](const torch::Tensor& x) { return clf.classifier.predict(x); }, batch, chain, expected,
          clf.label_map);
      report = r.to_json();
      std::cout << r.table();
      rm.inputs.push_back(a.classifier);
    } else {
      // Fraction of final outputs the synthetic oracle labels as --expected ("color,texture").
      const auto want = split_list(a.expected);
      if (want.size() != 2) throw ConfigError("oracle metric needs --expected <color>,<texture>");
      const auto trace = apply_chain(*source, chain, batch);
      std::int64_t hits = 0;
      for (std::int64_t i = 0; i < batch.size(0); ++i) {
        const auto v = synthetic_oracle(trace.images.back()[i], cfg.oracle);
        hits += to_string(v.color) == want[0] && to_string(v.texture) == want[1];
      }
      const double rate = static_cast<double>(hits) / static_cast<double>(batch.size(0));
      report = {{"metric", "oracle"}, {"chain", a.chain}, {"expected", want}, {"n", batch.size(0)}, {"pass_rate", rate}};
      std::cout << "pass rate " << rate << " (" << hits << "/" << batch.size(0) << ")\n";
    }
  } else {
    throw ConfigError("unknown metric '" + a.metric + "' (cycle, presence, oracle)");
  }
  write_json(out / "report.json", report);
  rm.inputs.insert(rm.inputs.end(), a.checkpoints.begin(), a.checkpoints.end());
  rm.outputs = {(out / "report.json").string()};
  return kOk;
}

int cmd_train_classifier(const Globals& g, RunConfig cfg, const ClassifierArgs& a, RunManifest& rm) {
  const auto out = require_out(g);
  if (a.steps) cfg.classifier.steps = *a.steps;
  if (!a.architecture.empty()) cfg.classifier.architecture = a.architecture;
  if (g.seed) cfg.classifier.seed = *g.seed;
  cfg.classifier.image_size = cfg.model.image_size;
  cfg.classifier.validate();
  LabeledImages data;
  std::vector<std::string> label_map;
  if (a.synthetic) {
    cfg.data.experiment = "synthetic";
    data = synthetic_labeled(*a.synthetic, cfg.classifier.seed, cfg.classifier.image_size);
  } else {
    data = attribute_labeled(cfg.data, cfg.classifier.image_size);
    rm.inputs = {cfg.data.attributes.string(), cfg.data.images.string()};
  }
  label_map = combination_label_map(cfg.data, cfg.data.domain_spec());
  const auto trained = train_classifier(data, cfg.classifier, label_map);
  save_classifier(out, trained);
  std::cout << "held-out accuracy " << trained.heldout_accuracy << " on " << trained.heldout_count << " images\n";
  rm.outputs = {(out / "classifier.json").string()};
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composable multi-domain image translation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_flag("--deterministic", g.deterministic, "Omit wall-clock data from written artifacts");
  app.add_option("--out", g.out, "Output directory (compose: grid path or directory)");

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare-data", "Build marginal domain folders from an attribute file");
  prepare->add_option("--attributes", prep.attributes, "CelebA list_attr file");
  prepare->add_option("--images", prep.images, "Image directory");
  prepare->add_option("--experiment", prep.experiment, "experiment_one | experiment_two");
  prepare->add_flag("--dry-run", prep.dry_run, "Print counts, write nothing");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic shapes dataset");
  synth_cmd->add_option("--count", synth.count, "Number of generated images");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a pair, joint or warm-started model");
  train_cmd->add_option("--regime", train.regime, "pair | joint | warm_start");
  train_cmd->add_option("--pair", train.pair, "Domain pair, e.g. red,blue");
  train_cmd->add_option("--from", train.from, "Two pair checkpoints for warm start")->expected(2);
  train_cmd->add_option("--steps", train.steps, "Training steps");
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");
  train_cmd->add_option("--data", train.data, "Prepared data root");

  ComposeArgs compose;
  auto* compose_cmd = app.add_subcommand("compose", "Run a translation chain and render a grid");
  compose_cmd->add_option("--checkpoint", compose.checkpoints, "Joint checkpoint, or several pair checkpoints")
      ->required();
  compose_cmd->add_option("--chain", compose.chain, "src>dst(,src>dst)*")->required();
  compose_cmd->add_option("--inputs", compose.inputs, "Image files or directories")->required();
  compose_cmd->add_option("--save-intermediates", compose.save_intermediates, "Directory for <stem>.step<k>.png");
  compose_cmd->add_flag("--noise", compose.noise, "Sample latent noise");

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Cycle, presence or oracle metric");
  eval_cmd->add_option("--metric", eval.metric, "cycle | presence | oracle");
  eval_cmd->add_option("--checkpoint", eval.checkpoints, "Joint checkpoint, or several pair checkpoints")->required();
  eval_cmd->add_option("--pair", eval.pair, "Pair for the cycle metric, e.g. red,blue");
  eval_cmd->add_option("--data", eval.data, "Prepared data root");
  eval_cmd->add_option("--inputs", eval.inputs, "Image files or directories");
  eval_cmd->add_option("--sample-size", eval.sample_size, "Images used by the cycle metric (0: all)");
  eval_cmd->add_option("--classifier", eval.classifier, "Classifier directory");
  eval_cmd->add_option("--chain", eval.chain, "Chain for presence / oracle metrics");
  eval_cmd->add_option("--expected", eval.expected, "presence: class per stage; oracle: color,texture");
  eval_cmd->add_option("--synthetic", eval.synthetic, "Use N generated red/plain images as the source batch");

  ClassifierArgs clf;
  auto* clf_cmd = app.add_subcommand("train-classifier", "Train the combination classifier");
  clf_cmd->add_option("--data", clf.data, "Unused for synthetic runs; see data.attributes");
  clf_cmd->add_option("--synthetic", clf.synthetic, "Train on N generated images over all combinations");
  clf_cmd->add_option("--steps", clf.steps, "Training steps");
  clf_cmd->add_option("--architecture", clf.architecture, "tiny | vgg11");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  torch::set_num_threads(1);
  RunManifest rm;
  rm.started_at = utc_timestamp();
  std::optional<OutputLock> lock;
  int code = kOk;
  try {
    auto cfg = load_run_config(g.config_path);
    if (g.seed) {
      cfg.train.seed = *g.seed;
      cfg.model.init_seed = *g.seed;
    }
    rm.seed = cfg.train.seed;
    rm.config_hash = cfg.hash();
    rm.effective_config = cfg.to_json();
    const bool dry = prepare->parsed() && prep.dry_run;
    fs::path manifest_dir;
    if (!g.out.empty() && !dry) {
      manifest_dir = fs::path(g.out);
      if (compose_cmd->parsed() && manifest_dir.extension() == ".png") manifest_dir = manifest_dir.parent_path();
      if (manifest_dir.empty()) manifest_dir = ".";
      lock.emplace(manifest_dir);
    }
    if (prepare->parsed()) {
      rm.command = "prepare-data";
      code = cmd_prepare_data(g, cfg, prep, rm);
    } else if (synth_cmd->parsed()) {
      rm.command = "synth-data";
      code = cmd_synth_data(g, cfg, synth, rm);
    } else if (train_cmd->parsed()) {
      rm.command = "train";
      code = cmd_train(g, cfg, train, rm);
    } else if (compose_cmd->parsed()) {
      rm.command = "compose";
      code = cmd_compose(g, compose, rm);
    } else if (eval_cmd->parsed()) {
      rm.command = "evaluate";
      code = cmd_evaluate(g, cfg, eval, rm);
    } else if (clf_cmd->parsed()) {
      rm.command = "train-classifier";
      code = cmd_train_classifier(g, cfg, clf, rm);
    }
    if (!manifest_dir.empty()) {
      rm.finished_at = utc_timestamp();
      rm.exit_code = code;
      write_run_manifest(manifest_dir, rm);
    }
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training diverged in " << e.component << ": " << e.what() << "\n";
    if (e.last_checkpoint) std::cerr << "last good checkpoint: " << e.last_checkpoint->string() << "\n";
    return kDiverged;
  } catch (const ParseError& e) {
    std::cerr << "error: bad chain at position " << e.position << ": " << e.what() << "\n";
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const TransplantError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return code;
}
