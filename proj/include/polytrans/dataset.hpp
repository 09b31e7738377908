#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace polytrans {

/// Attribute labels for an image corpus in the CelebA list_attr layout.
struct AttributeIndex {
  struct Entry {
    std::string image_id;
    std::vector<std::uint8_t> attributes;  // 1 = true, 0 = false
  };

  std::vector<std::string> attribute_names;
  std::vector<Entry> entries;

  /// Position of `name` in attribute_names; throws ConfigError when absent.
  std::size_t attribute_position(const std::string& name) const;
};

/// Parses the CelebA attribute-list format:
///   line 1: row count
///   line 2: whitespace separated attribute names
///   rows:   <image-id> <+-1> ... <+-1>
/// Throws FormatError naming the offending line.
AttributeIndex load_attribute_index(const std::filesystem::path& path);
AttributeIndex parse_attribute_index(std::istream& in, const std::string& source_name = "<stream>");

/// Boolean expression over attribute names: `!`, `&`, `|`, parentheses and
/// the literals `true` / `false`, e.g. "Smiling & !Eyeglasses".
class AttributePredicate {
 public:
  AttributePredicate();  // constant false
  static AttributePredicate parse(const std::string& text);

  const std::string& text() const { return text_; }
  std::vector<std::string> referenced_names() const;
  /// True for the literal `false` (used to detect a disabled exclusion).
  bool is_constant_false() const;

  /// Evaluates against `attributes`, resolving names through `names`.
  bool evaluate(std::span<const std::uint8_t> attributes, const std::vector<std::string>& names) const;

  /// Resolves referenced names once; pair with evaluate_bound for bulk use.
  std::vector<std::size_t> bind(const std::vector<std::string>& names) const;
  bool evaluate_bound(std::span<const std::uint8_t> attributes, const std::vector<std::size_t>& slots) const;

  struct Node;

 private:
  std::string text_;
  std::shared_ptr<const Node> root_;
};

/// Membership rules for the N marginal domains.
struct DomainSpec {
  std::vector<std::string> domain_names;
  std::vector<AttributePredicate> predicates;
  AttributePredicate exclusion;
  std::vector<std::pair<int, int>> pairing;  // 0-based domain indices

  std::size_t num_domains() const { return domain_names.size(); }
  /// N even, predicates sized N, pairing partitions the domains.
  void validate() const;
  int partner(int domain) const;

  nlohmann::json to_json() const;
  static DomainSpec from_json(const nlohmann::json& j);
};

/// Glasses / no-glasses / smiling / not-smiling with smiling-and-glasses held out.
DomainSpec celeba_experiment_one();
/// Blonde / brunette / smiling / not-smiling with smiling blonde or brunette held out.
DomainSpec celeba_experiment_two();

struct BuildOptions {
  double eval_fraction = 0.05;
  /// Images claimed by an earlier pair are dropped from later pairs.
  bool disjoint_pairs = false;
  /// 0 keeps everything; otherwise truncates each domain's training list.
  std::size_t max_per_domain = 0;
};

struct DomainSet {
  std::string name;
  std::string predicate;
  std::vector<std::string> train;
  std::vector<std::string> eval;

  std::size_t count() const { return train.size() + eval.size(); }
};

struct DomainDatasets {
  std::vector<DomainSet> domains;

  std::vector<std::size_t> counts() const;
  const DomainSet& at(const std::string& name) const;
  /// Hash over names and member lists; stable for identical memberships.
  std::string content_hash() const;
};

/// Deterministic evaluation split: hash of the image id, independent of order.
bool is_eval_image(const std::string& image_id, double eval_fraction);

/// Domain d gets every image satisfying predicate d and not the exclusion.
/// Throws ConfigError when a name is unknown or a domain comes out empty.
DomainDatasets build_marginal_sets(const AttributeIndex& index, const DomainSpec& spec,
                                   const BuildOptions& options = {});

/// Re-evaluates the exclusion over every member; returns how many violate it.
std::size_t count_exclusion_violations(const AttributeIndex& index, const DomainSpec& spec,
                                       const DomainDatasets& sets);

nlohmann::json dataset_manifest(const DomainSpec& spec, const DomainDatasets& sets,
                                std::size_t exclusion_violations, const BuildOptions& options);

}  // namespace polytrans
