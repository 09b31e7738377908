#include "polytrans/composer.hpp"

#include <algorithm>
#include <cctype>

#include "polytrans/errors.hpp"
#include "polytrans/image.hpp"

namespace polytrans {

std::vector<Translator> TranslatorSource::registry() const {
  std::vector<Translator> out;
  const int n = static_cast<int>(domain_names().size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (supports({i, j})) out.push_back({i, j});
    }
  }
  return out;
}

JointTranslators::JointTranslators(NetworkSet net) : net_(std::move(net)) { net_.set_training(false); }

bool JointTranslators::supports(Translator t) const {
  return t.source >= 0 && t.target >= 0 && t.source < net_.num_domains() && t.target < net_.num_domains();
}

torch::Tensor JointTranslators::translate(Translator t, const torch::Tensor& x, bool noise_enabled) const {
  torch::NoGradGuard no_grad;
  return polytrans::translate(net_, t, x, noise_enabled);
}

SeparateTranslators::SeparateTranslators(std::vector<NetworkSet> models) : models_(std::move(models)) {
  if (models_.empty()) throw ContractError("SeparateTranslators needs at least one model");
  for (std::size_t m = 0; m < models_.size(); ++m) {
    if (models_[m].config().image_shape() != models_.front().config().image_shape()) {
      throw ConfigError("separately trained models disagree on image shape");
    }
    models_[m].set_training(false);
    for (int d = 0; d < models_[m].num_domains(); ++d) {
      const auto& name = models_[m].domain_names()[d];
      if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
        throw ConfigError("domain '" + name + "' appears in more than one model");
      }
      names_.push_back(name);
      owner_.emplace_back(static_cast<int>(m), d);
    }
  }
}

bool SeparateTranslators::supports(Translator t) const {
  const int n = static_cast<int>(names_.size());
  if (t.source < 0 || t.target < 0 || t.source >= n || t.target >= n) return false;
  return owner_[t.source].first == owner_[t.target].first;
}

torch::Tensor SeparateTranslators::translate(Translator t, const torch::Tensor& x, bool noise_enabled) const {
  if (!supports(t)) {
    throw ContractError("translator " + std::to_string(t.source) + ">" + std::to_string(t.target) +
                        " crosses separately trained models");
  }
  torch::NoGradGuard no_grad;
  const auto& net = models_[owner_[t.source].first];
  return polytrans::translate(net, {owner_[t.source].second, owner_[t.target].second}, x, noise_enabled);
}

// ---------------------------------------------------------------------------

namespace {

std::string lowered(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

int resolve_domain(const std::string& token, std::size_t position, const std::vector<std::string>& names) {
  if (token.empty()) throw ParseError(position, "expected a domain name or index");
  if (std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); })) {
    const long long index = std::stoll(token);
    if (index < 1 || index > static_cast<long long>(names.size())) {
      throw ParseError(position, "domain index " + token + " out of range 1.." + std::to_string(names.size()));
    }
    return static_cast<int>(index - 1);
  }
  for (std::size_t d = 0; d < names.size(); ++d) {
    if (lowered(names[d]) == lowered(token)) return static_cast<int>(d);
  }
  throw ParseError(position, "unknown domain '" + token + "'");
}

}  // namespace

ChainSpec parse_chain(const std::string& text, const std::vector<std::string>& domain_names) {
  ChainSpec chain;
  auto is_blank = [](unsigned char c) { return std::isspace(c) != 0; };
  if (std::all_of(text.begin(), text.end(), is_blank)) return chain;

  std::size_t pos = 0;
  auto read_name = [&](std::size_t& start) {
    while (pos < text.size() && is_blank(text[pos])) ++pos;
    start = pos;
    while (pos < text.size() && text[pos] != '>' && text[pos] != ',' && !is_blank(text[pos])) ++pos;
    std::string token = text.substr(start, pos - start);
    while (pos < text.size() && is_blank(text[pos])) ++pos;
    return token;
  };

  while (true) {
    std::size_t src_pos = 0, dst_pos = 0;
    const auto src = read_name(src_pos);
    const int source = resolve_domain(src, src_pos, domain_names);
    if (pos >= text.size() || text[pos] != '>') throw ParseError(pos, "expected '>'");
    ++pos;
    const auto dst = read_name(dst_pos);
    const int target = resolve_domain(dst, dst_pos, domain_names);
    chain.steps.push_back({source, target});
    if (pos == text.size()) break;
    if (text[pos] != ',') throw ParseError(pos, "expected ',' between steps");
    ++pos;
  }
  return chain;
}

std::string format_chain(const ChainSpec& chain, const std::vector<std::string>& domain_names) {
  std::string out;
  for (std::size_t k = 0; k < chain.steps.size(); ++k) {
    if (k) out += ",";
    out += domain_names.at(chain.steps[k].source) + ">" + domain_names.at(chain.steps[k].target);
  }
  return out;
}

TranslationTrace apply_chain(const TranslatorSource& source, const ChainSpec& chain, const torch::Tensor& x) {
  const auto want = source.image_shape();
  const auto sizes = x.sizes();
  const bool ok = (x.dim() == 3 && sizes.vec() == want) ||
                  (x.dim() == 4 && std::vector<std::int64_t>(sizes.begin() + 1, sizes.end()) == want);
  if (!ok) throw ContractError("apply_chain: input does not match the model's image shape");

  TranslationTrace trace;
  trace.images.push_back(x);
  trace.step_labels.push_back("original");
  for (const auto& step : chain.steps) {
    if (!source.supports(step)) {
      throw ContractError("translator " + std::to_string(step.source + 1) + ">" + std::to_string(step.target + 1) +
                          " is not available from this model");
    }
    trace.images.push_back(source.translate(step, trace.images.back(), chain.noise_enabled).to(x.scalar_type()));
    trace.step_labels.push_back(source.domain_names()[step.source] + ">" + source.domain_names()[step.target]);
  }
  return trace;
}

std::vector<TranslationTrace> unbatch(const TranslationTrace& trace) {
  if (trace.images.empty() || trace.images.front().dim() != 4) throw ContractError("unbatch: expected NCHW stages");
  std::vector<TranslationTrace> out(static_cast<std::size_t>(trace.images.front().size(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].step_labels = trace.step_labels;
    for (const auto& stage : trace.images) out[i].images.push_back(stage[static_cast<std::int64_t>(i)]);
  }
  return out;
}

cv::Mat grid_image(const std::vector<TranslationTrace>& traces) {
  if (traces.empty()) throw ContractError("render_grid: no traces");
  const std::size_t columns = traces.front().images.size();
  for (const auto& t : traces) {
    if (t.images.size() != columns) throw ContractError("render_grid: traces have different lengths");
  }
  const auto& first = traces.front().images.front();
  if (first.dim() != 3) throw ContractError("render_grid: expected CHW images (use unbatch)");
  const int c = static_cast<int>(first.size(0));
  const int h = static_cast<int>(first.size(1));
  const int w = static_cast<int>(first.size(2));
  cv::Mat grid(h * static_cast<int>(traces.size()), w * static_cast<int>(columns), c == 1 ? CV_8UC1 : CV_8UC3,
               cv::Scalar::all(0));
  for (std::size_t r = 0; r < traces.size(); ++r) {
    for (std::size_t k = 0; k < columns; ++k) {
      const auto cell = to_u8(traces[r].images[k]);
      if (cell.rows != h || cell.cols != w || cell.channels() != c) {
        throw ContractError("render_grid: images differ in shape");
      }
      cell.copyTo(grid(cv::Rect(static_cast<int>(k) * w, static_cast<int>(r) * h, w, h)));
    }
  }
  return grid;
}

void render_grid(const std::vector<TranslationTrace>& traces, const std::filesystem::path& path) {
  write_png(path, grid_image(traces));
}

}  // namespace polytrans
