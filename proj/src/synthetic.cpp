#include "polytrans/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"
#include "polytrans/image.hpp"

namespace fs = std::filesystem;

namespace polytrans {

std::string to_string(ShapeColor c) { return c == ShapeColor::red ? "red" : "blue"; }
std::string to_string(ShapeTexture t) { return t == ShapeTexture::plain ? "plain" : "striped"; }

ShapeColor parse_color(const std::string& s) {
  if (s == "red") return ShapeColor::red;
  if (s == "blue") return ShapeColor::blue;
  throw ConfigError("unknown color '" + s + "'");
}

ShapeTexture parse_texture(const std::string& s) {
  if (s == "plain") return ShapeTexture::plain;
  if (s == "striped") return ShapeTexture::striped;
  throw ConfigError("unknown texture '" + s + "'");
}

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace

torch::Tensor render_synthetic(ShapeColor color, ShapeTexture texture, std::uint64_t seed, int size) {
  if (size < 8) throw ContractError("synthetic images need at least 8 pixels per side");
  Rng rng(seed);
  const double scale = size / 32.0;

  const double background = rng.uniform(-0.3, 0.1);
  const bool square = rng.uniform() < 0.5;
  const double radius = rng.uniform(7.0, 11.0) * scale;
  const double cx = rng.uniform(radius, size - radius);
  const double cy = rng.uniform(radius, size - radius);
  const double strong = rng.uniform(0.55, 0.95);
  const double green = rng.uniform(-0.75, -0.45);
  const double weak = rng.uniform(-0.85, -0.55);
  const int phase = static_cast<int>(rng.next() % kStripePeriod);
  const double fill[3] = {color == ShapeColor::red ? strong : weak, green, color == ShapeColor::red ? weak : strong};

  auto image = torch::empty({3, size, size}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();
  for (int y = 0; y < size; ++y) {
    const bool dark_row = texture == ShapeTexture::striped && ((y + phase) % kStripePeriod) < kStripePeriod / 2;
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const bool inside =
          square ? (std::abs(dx) <= radius * 0.85 && std::abs(dy) <= radius * 0.85) : (dx * dx + dy * dy <= radius * radius);
      for (int c = 0; c < 3; ++c) {
        double v = inside ? fill[c] : background + 0.04 * rng.normal();
        if (dark_row) v = (v + 1.0) * kStripeDarkening - 1.0;
        acc[c][y][x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return image;
}

std::set<Combination> all_combinations() {
  return {{ShapeColor::red, ShapeTexture::plain},
          {ShapeColor::blue, ShapeTexture::plain},
          {ShapeColor::red, ShapeTexture::striped},
          {ShapeColor::blue, ShapeTexture::striped}};
}

std::vector<SyntheticSample> synth_generate(int count, const std::set<Combination>& allowed, std::uint64_t seed,
                                            int size) {
  if (count <= 0) throw ContractError("synth_generate: count must be positive");
  if (allowed.empty()) throw ContractError("synth_generate: allowed combinations must be nonempty");
  const std::vector<Combination> choices(allowed.begin(), allowed.end());
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng label_rng(mix_seed(seed, static_cast<std::uint64_t>(i), 1));
    const auto& combo = choices[label_rng.next() % choices.size()];
    SyntheticSample s;
    std::ostringstream id;
    id << "syn" << std::setw(6) << std::setfill('0') << i;
    s.image_id = id.str();
    s.color = combo.first;
    s.texture = combo.second;
    s.seed = mix_seed(seed, static_cast<std::uint64_t>(i), 2);
    s.image = render_synthetic(s.color, s.texture, s.seed, size);
    out.push_back(std::move(s));
  }
  return out;
}

AttributeIndex synthetic_attribute_index(const std::vector<SyntheticSample>& samples) {
  AttributeIndex index;
  index.attribute_names = {"red", "striped"};
  for (const auto& s : samples) {
    index.entries.push_back({s.image_id,
                             {static_cast<std::uint8_t>(s.color == ShapeColor::red),
                              static_cast<std::uint8_t>(s.texture == ShapeTexture::striped)}});
  }
  return index;
}

DomainSpec synthetic_domain_spec() {
  DomainSpec s;
  s.domain_names = {"red", "blue", "striped", "plain"};
  s.predicates = {AttributePredicate::parse("red"), AttributePredicate::parse("!red"),
                  AttributePredicate::parse("striped"), AttributePredicate::parse("!striped")};
  s.exclusion = AttributePredicate::parse("!red & striped");
  s.pairing = {{0, 1}, {2, 3}};
  return s;
}

int combination_class(ShapeColor c, ShapeTexture t) {
  return (c == ShapeColor::red ? 0 : 1) + (t == ShapeTexture::plain ? 0 : 2);
}

std::vector<std::string> synthetic_label_map() {
  return {"Red & Plain", "Blue & Plain", "Red & Striped", "Blue & Striped"};
}

void write_synthetic_dataset(const fs::path& dir, const std::vector<SyntheticSample>& samples, const DomainSpec& spec,
                             const BuildOptions& options) {
  const auto index = synthetic_attribute_index(samples);
  const auto sets = build_marginal_sets(index, spec, options);
  std::unordered_map<std::string, const SyntheticSample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.image_id, &s);

  fs::create_directories(dir);
  for (const auto& d : sets.domains) {
    for (const auto* list : {&d.train, &d.eval}) {
      const fs::path sub = list == &d.train ? dir / d.name : dir / "eval" / d.name;
      fs::create_directories(sub);
      for (const auto& id : *list) write_png(sub / (id + ".png"), to_u8(by_id.at(id)->image));
    }
  }
  std::ofstream labels(dir / "labels.txt");
  if (!labels) throw IoError("cannot write " + (dir / "labels.txt").string());
  for (const auto& s : samples) {
    labels << s.image_id << ' ' << to_string(s.color) << ' ' << to_string(s.texture) << ' ' << s.seed << '\n';
  }
  auto manifest = dataset_manifest(spec, sets, count_exclusion_violations(index, spec, sets), options);
  manifest["synthetic"] = {{"count", samples.size()}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

std::vector<SyntheticLabel> read_synthetic_labels(const fs::path& labels_file) {
  std::ifstream in(labels_file);
  if (!in) throw IoError("cannot open " + labels_file.string());
  std::vector<SyntheticLabel> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, color, texture;
    std::uint64_t seed = 0;
    if (!(ls >> id >> color >> texture >> seed)) {
      throw FormatError(labels_file.string() + ":" + std::to_string(line_no) + ": malformed label line");
    }
    out.push_back({id, parse_color(color), parse_texture(texture), seed});
  }
  return out;
}

}  // namespace polytrans
