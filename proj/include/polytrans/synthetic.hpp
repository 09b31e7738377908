#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "polytrans/dataset.hpp"

namespace polytrans {

enum class ShapeColor { red, blue };
enum class ShapeTexture { plain, striped };

std::string to_string(ShapeColor c);
std::string to_string(ShapeTexture t);
ShapeColor parse_color(const std::string& s);
ShapeTexture parse_texture(const std::string& s);

using Combination = std::pair<ShapeColor, ShapeTexture>;

/// Horizontal stripe period in pixels. The oracle's frequency band is tied to it.
inline constexpr int kStripePeriod = 4;
/// Brightness multiplier applied to the dark stripe rows (in [0, 2] space).
inline constexpr double kStripeDarkening = 0.35;

struct SyntheticSample {
  std::string image_id;
  torch::Tensor image;  // 3 x size x size, [-1, 1]
  ShapeColor color;
  ShapeTexture texture;
  std::uint64_t seed;
};

/// Renders one image. Nuisance factors (shape kind, position, size, background
/// level and noise, stripe phase, exact hue) are all drawn from `seed`.
torch::Tensor render_synthetic(ShapeColor color, ShapeTexture texture, std::uint64_t seed, int size);

/// Labels uniform over `allowed`; pure function of its arguments.
std::vector<SyntheticSample> synth_generate(int count, const std::set<Combination>& allowed,
                                            std::uint64_t seed, int size = 32);

std::set<Combination> all_combinations();

/// Attribute view of a synthetic corpus with attributes "red" and "striped".
AttributeIndex synthetic_attribute_index(const std::vector<SyntheticSample>& samples);

/// red / blue / striped / plain, pairing (red, blue), (striped, plain),
/// blue-and-striped held out.
DomainSpec synthetic_domain_spec();

/// Class index used by the combination classifier: color varies fastest.
int combination_class(ShapeColor c, ShapeTexture t);
std::vector<std::string> synthetic_label_map();

/// Writes `<dir>/<domain>/<id>.png` for every domain an image belongs to,
/// `<dir>/labels.txt` (`<id> <color> <texture> <seed>`) and `<dir>/manifest.json`.
void write_synthetic_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples,
                             const DomainSpec& spec, const BuildOptions& options);

struct SyntheticLabel {
  std::string image_id;
  ShapeColor color;
  ShapeTexture texture;
  std::uint64_t seed;
};
std::vector<SyntheticLabel> read_synthetic_labels(const std::filesystem::path& labels_file);

}  // namespace polytrans
