#include "polytrans/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "polytrans/digest.hpp"
#include "polytrans/errors.hpp"

namespace polytrans {

std::size_t AttributeIndex::attribute_position(const std::string& name) const {
  const auto it = std::find(attribute_names.begin(), attribute_names.end(), name);
  if (it == attribute_names.end()) throw ConfigError("unknown attribute '" + name + "'");
  return static_cast<std::size_t>(it - attribute_names.begin());
}

AttributeIndex parse_attribute_index(std::istream& in, const std::string& source_name) {
  auto fail = [&](std::size_t line, const std::string& msg) {
    throw FormatError(source_name + ":" + std::to_string(line) + ": " + msg);
  };

  AttributeIndex index;
  std::string line;
  if (!std::getline(in, line)) fail(1, "missing row count");
  long long declared = 0;
  {
    std::istringstream ls(line);
    std::string extra;
    if (!(ls >> declared) || declared < 0 || (ls >> extra)) fail(1, "row count must be a non-negative integer");
  }
  if (!std::getline(in, line)) {
    if (declared == 0) return index;
    fail(2, "missing attribute name header");
  }
  {
    std::istringstream ls(line);
    std::string name;
    while (ls >> name) index.attribute_names.push_back(name);
  }
  const std::set<std::string> unique_names(index.attribute_names.begin(), index.attribute_names.end());
  if (unique_names.size() != index.attribute_names.size()) fail(2, "duplicate attribute name");

  const std::size_t width = index.attribute_names.size();
  std::unordered_set<std::string> seen_ids;
  index.entries.reserve(static_cast<std::size_t>(declared));
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    std::istringstream ls(line);
    AttributeIndex::Entry entry;
    ls >> entry.image_id;
    entry.attributes.reserve(width);
    std::string token;
    while (ls >> token) {
      if (token == "1") {
        entry.attributes.push_back(1);
      } else if (token == "-1") {
        entry.attributes.push_back(0);
      } else {
        fail(line_no, "unknown attribute token '" + token + "'");
      }
    }
    if (entry.attributes.size() != width) {
      fail(line_no, "expected " + std::to_string(width) + " attribute values, found " +
                        std::to_string(entry.attributes.size()));
    }
    if (!seen_ids.insert(entry.image_id).second) fail(line_no, "duplicate image id '" + entry.image_id + "'");
    index.entries.push_back(std::move(entry));
  }
  if (static_cast<long long>(index.entries.size()) != declared) {
    fail(1, "header declares " + std::to_string(declared) + " rows but " + std::to_string(index.entries.size()) +
                " were found");
  }
  return index;
}

AttributeIndex load_attribute_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open attribute file " + path.string());
  return parse_attribute_index(in, path.string());
}

// ---------------------------------------------------------------------------
// Predicates

struct AttributePredicate::Node {
  enum class Kind { constant, name, negate, conj, disj } kind;
  bool value = false;
  std::string name;
  std::size_t slot = 0;
  std::shared_ptr<const Node> lhs, rhs;
};

namespace {

using NodePtr = std::shared_ptr<const AttributePredicate::Node>;
using Node = AttributePredicate::Node;

class PredicateParser {
 public:
  explicit PredicateParser(const std::string& text) : text_(text) {}

  NodePtr parse() {
    auto node = parse_or();
    skip_space();
    if (pos_ != text_.size()) error("unexpected character");
    return node;
  }

  std::vector<std::string> names;

 private:
  [[noreturn]] void error(const std::string& msg) const {
    throw ConfigError("predicate '" + text_ + "': " + msg + " at position " + std::to_string(pos_));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr parse_or() {
    auto lhs = parse_and();
    while (accept('|')) {
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::disj;
      n->lhs = lhs;
      n->rhs = parse_and();
      lhs = n;
    }
    return lhs;
  }

  NodePtr parse_and() {
    auto lhs = parse_unary();
    while (accept('&')) {
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::conj;
      n->lhs = lhs;
      n->rhs = parse_unary();
      lhs = n;
    }
    return lhs;
  }

  NodePtr parse_unary() {
    if (accept('!')) {
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::negate;
      n->lhs = parse_unary();
      return n;
    }
    if (accept('(')) {
      auto inner = parse_or();
      if (!accept(')')) error("expected ')'");
      return inner;
    }
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' || text_[pos_] == '-')) {
      ++pos_;
    }
    if (start == pos_) error("expected attribute name");
    auto n = std::make_shared<Node>();
    const std::string word = text_.substr(start, pos_ - start);
    if (word == "true" || word == "false") {
      n->kind = Node::Kind::constant;
      n->value = word == "true";
    } else {
      n->kind = Node::Kind::name;
      n->name = word;
      const auto it = std::find(names.begin(), names.end(), word);
      n->slot = static_cast<std::size_t>(it - names.begin());
      if (it == names.end()) names.push_back(word);
    }
    return n;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

bool eval_node(const Node& n, std::span<const std::uint8_t> attrs, const std::vector<std::size_t>& slots) {
  switch (n.kind) {
    case Node::Kind::constant: return n.value;
    case Node::Kind::name: return attrs[slots[n.slot]] != 0;
    case Node::Kind::negate: return !eval_node(*n.lhs, attrs, slots);
    case Node::Kind::conj: return eval_node(*n.lhs, attrs, slots) && eval_node(*n.rhs, attrs, slots);
    case Node::Kind::disj: return eval_node(*n.lhs, attrs, slots) || eval_node(*n.rhs, attrs, slots);
  }
  return false;
}

void collect_names(const Node& n, std::vector<std::pair<std::size_t, std::string>>& out) {
  if (n.kind == Node::Kind::name) out.emplace_back(n.slot, n.name);
  if (n.lhs) collect_names(*n.lhs, out);
  if (n.rhs) collect_names(*n.rhs, out);
}

}  // namespace

AttributePredicate::AttributePredicate() : text_("false") {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::constant;
  root_ = std::move(n);
}

AttributePredicate AttributePredicate::parse(const std::string& text) {
  AttributePredicate p;
  p.text_ = text;
  PredicateParser parser(text);
  p.root_ = parser.parse();
  return p;
}

std::vector<std::string> AttributePredicate::referenced_names() const {
  std::vector<std::pair<std::size_t, std::string>> found;
  collect_names(*root_, found);
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  std::vector<std::string> out;
  for (auto& [slot, name] : found) out.push_back(name);
  return out;
}

bool AttributePredicate::is_constant_false() const {
  return root_->kind == Node::Kind::constant && !root_->value;
}

std::vector<std::size_t> AttributePredicate::bind(const std::vector<std::string>& names) const {
  std::vector<std::size_t> slots;
  for (const auto& n : referenced_names()) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw ConfigError("predicate '" + text_ + "' references unknown attribute '" + n + "'");
    slots.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  return slots;
}

bool AttributePredicate::evaluate_bound(std::span<const std::uint8_t> attributes,
                                        const std::vector<std::size_t>& slots) const {
  return eval_node(*root_, attributes, slots);
}

bool AttributePredicate::evaluate(std::span<const std::uint8_t> attributes,
                                  const std::vector<std::string>& names) const {
  return evaluate_bound(attributes, bind(names));
}

// ---------------------------------------------------------------------------
// Domain specs

void DomainSpec::validate() const {
  const std::size_t n = domain_names.size();
  if (n == 0 || n % 2 != 0) throw ConfigError("domain count must be even and positive, got " + std::to_string(n));
  if (predicates.size() != n) throw ConfigError("one predicate per domain required");
  std::set<std::string> names(domain_names.begin(), domain_names.end());
  if (names.size() != n) throw ConfigError("domain names must be unique");
  std::vector<int> covered(n, 0);
  for (auto [a, b] : pairing) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n || a == b) {
      throw ConfigError("invalid pairing entry (" + std::to_string(a) + ", " + std::to_string(b) + ")");
    }
    ++covered[a];
    ++covered[b];
  }
  for (std::size_t d = 0; d < n; ++d) {
    if (covered[d] != 1) throw ConfigError("pairing must cover domain '" + domain_names[d] + "' exactly once");
  }
}

int DomainSpec::partner(int domain) const {
  for (auto [a, b] : pairing) {
    if (a == domain) return b;
    if (b == domain) return a;
  }
  throw ContractError("domain " + std::to_string(domain) + " is not paired");
}

nlohmann::json DomainSpec::to_json() const {
  nlohmann::json j;
  j["domain_names"] = domain_names;
  std::vector<std::string> preds;
  for (const auto& p : predicates) preds.push_back(p.text());
  j["predicates"] = preds;
  j["exclusion"] = exclusion.text();
  nlohmann::json pairs = nlohmann::json::array();
  for (auto [a, b] : pairing) pairs.push_back({domain_names[a], domain_names[b]});
  j["pairing"] = pairs;
  return j;
}

DomainSpec DomainSpec::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"domain_names", "predicates", "exclusion", "pairing"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown domain spec key '" + key + "'");
  }
  DomainSpec spec;
  try {
    spec.domain_names = j.at("domain_names").get<std::vector<std::string>>();
    for (const auto& p : j.at("predicates")) spec.predicates.push_back(AttributePredicate::parse(p.get<std::string>()));
    spec.exclusion = AttributePredicate::parse(j.value("exclusion", std::string("false")));
    for (const auto& pair : j.at("pairing")) {
      auto find = [&](const std::string& name) {
        const auto it = std::find(spec.domain_names.begin(), spec.domain_names.end(), name);
        if (it == spec.domain_names.end()) throw ConfigError("pairing references unknown domain '" + name + "'");
        return static_cast<int>(it - spec.domain_names.begin());
      };
      spec.pairing.emplace_back(find(pair.at(0).get<std::string>()), find(pair.at(1).get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("domain spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

DomainSpec celeba_experiment_one() {
  DomainSpec s;
  s.domain_names = {"no_glasses", "glasses", "smiling", "not_smiling"};
  s.predicates = {AttributePredicate::parse("!Eyeglasses"), AttributePredicate::parse("Eyeglasses"),
                  AttributePredicate::parse("Smiling"), AttributePredicate::parse("!Smiling")};
  s.exclusion = AttributePredicate::parse("Smiling & Eyeglasses");
  s.pairing = {{0, 1}, {2, 3}};
  return s;
}

DomainSpec celeba_experiment_two() {
  DomainSpec s;
  s.domain_names = {"blonde", "brunette", "smiling", "not_smiling"};
  s.predicates = {AttributePredicate::parse("Blond_Hair"), AttributePredicate::parse("Brown_Hair"),
                  AttributePredicate::parse("Smiling"), AttributePredicate::parse("!Smiling")};
  s.exclusion = AttributePredicate::parse("Smiling & (Blond_Hair | Brown_Hair)");
  s.pairing = {{0, 1}, {2, 3}};
  return s;
}

// ---------------------------------------------------------------------------
// Marginal sets

std::vector<std::size_t> DomainDatasets::counts() const {
  std::vector<std::size_t> out;
  for (const auto& d : domains) out.push_back(d.count());
  return out;
}

const DomainSet& DomainDatasets::at(const std::string& name) const {
  for (const auto& d : domains) {
    if (d.name == name) return d;
  }
  throw ContractError("no domain named '" + name + "'");
}

std::string DomainDatasets::content_hash() const {
  Sha256 h;
  for (const auto& d : domains) {
    h.update("domain\n" + d.name + "\n");
    for (const auto& id : d.train) h.update("t " + id + "\n");
    for (const auto& id : d.eval) h.update("e " + id + "\n");
  }
  return h.finish();
}

bool is_eval_image(const std::string& image_id, double eval_fraction) {
  if (eval_fraction <= 0.0) return false;
  const double u = static_cast<double>(stable_hash64("eval-split:" + image_id) >> 11) * 0x1.0p-53;
  return u < eval_fraction;
}

DomainDatasets build_marginal_sets(const AttributeIndex& index, const DomainSpec& spec, const BuildOptions& options) {
  spec.validate();
  const auto exclusion_slots = spec.exclusion.bind(index.attribute_names);
  std::vector<std::vector<std::size_t>> slots;
  for (const auto& p : spec.predicates) slots.push_back(p.bind(index.attribute_names));

  DomainDatasets out;
  out.domains.resize(spec.num_domains());
  for (std::size_t d = 0; d < spec.num_domains(); ++d) {
    out.domains[d].name = spec.domain_names[d];
    out.domains[d].predicate = spec.predicates[d].text();
  }

  // Domains are visited pair by pair so that disjoint_pairs can drop images
  // already claimed by an earlier pair.
  std::unordered_set<std::string> claimed;
  for (auto [a, b] : spec.pairing) {
    std::unordered_set<std::string> claimed_here;
    for (int d : {a, b}) {
      auto& set = out.domains[d];
      for (const auto& e : index.entries) {
        if (spec.exclusion.evaluate_bound(e.attributes, exclusion_slots)) continue;
        if (!spec.predicates[d].evaluate_bound(e.attributes, slots[d])) continue;
        if (options.disjoint_pairs && claimed.count(e.image_id)) continue;
        claimed_here.insert(e.image_id);
        if (is_eval_image(e.image_id, options.eval_fraction)) {
          set.eval.push_back(e.image_id);
        } else if (options.max_per_domain == 0 || set.train.size() < options.max_per_domain) {
          set.train.push_back(e.image_id);
        }
      }
    }
    claimed.insert(claimed_here.begin(), claimed_here.end());
  }

  for (std::size_t d = 0; d < out.domains.size(); ++d) {
    if (out.domains[d].train.empty()) {
      throw ConfigError("domain '" + out.domains[d].name + "' is empty (predicate '" + spec.predicates[d].text() +
                        "', exclusion '" + spec.exclusion.text() + "')");
    }
  }
  return out;
}

std::size_t count_exclusion_violations(const AttributeIndex& index, const DomainSpec& spec,
                                       const DomainDatasets& sets) {
  std::unordered_map<std::string, const AttributeIndex::Entry*> by_id;
  by_id.reserve(index.entries.size());
  for (const auto& e : index.entries) by_id.emplace(e.image_id, &e);
  const auto slots = spec.exclusion.bind(index.attribute_names);
  std::size_t violations = 0;
  for (const auto& d : sets.domains) {
    for (const auto* list : {&d.train, &d.eval}) {
      for (const auto& id : *list) {
        const auto it = by_id.find(id);
        if (it == by_id.end() || spec.exclusion.evaluate_bound(it->second->attributes, slots)) ++violations;
      }
    }
  }
  return violations;
}

nlohmann::json dataset_manifest(const DomainSpec& spec, const DomainDatasets& sets, std::size_t exclusion_violations,
                                const BuildOptions& options) {
  nlohmann::json j;
  j["spec"] = spec.to_json();
  j["options"] = {{"eval_fraction", options.eval_fraction},
                  {"disjoint_pairs", options.disjoint_pairs},
                  {"max_per_domain", options.max_per_domain}};
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : sets.domains) {
    domains.push_back({{"name", d.name},
                       {"predicate", d.predicate},
                       {"count", d.count()},
                       {"train", d.train.size()},
                       {"eval", d.eval.size()}});
  }
  j["domains"] = domains;
  j["exclusion_violations"] = exclusion_violations;
  j["content_hash"] = sets.content_hash();
  return j;
}

}  // namespace polytrans
