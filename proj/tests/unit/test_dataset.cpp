#include <doctest.h>

#include <sstream>

#include "polytrans/dataset.hpp"
#include "polytrans/errors.hpp"

using namespace polytrans;

namespace {

AttributeIndex parse(const std::string& text) {
  std::istringstream in(text);
  return parse_attribute_index(in, "attrs.txt");
}

// Eyeglasses / Smiling / Male over six faces covering every glasses-smiling cell.
const char* kSixFaces =
    "6\n"
    "Eyeglasses Smiling Male\n"
    "000001.jpg -1 -1  1\n"
    "000002.jpg  1 -1  1\n"
    "000003.jpg -1  1 -1\n"
    "000004.jpg  1  1 -1\n"
    "000005.jpg -1 -1 -1\n"
    "000006.jpg -1  1  1\n";

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("attribute file parsing") {
  const auto idx = parse(kSixFaces);
  CHECK(idx.attribute_names == std::vector<std::string>{"Eyeglasses", "Smiling", "Male"});
  REQUIRE(idx.entries.size() == 6);
  CHECK(idx.entries[3].image_id == "000004.jpg");
  CHECK(idx.entries[3].attributes == std::vector<std::uint8_t>{1, 1, 0});
  CHECK(idx.attribute_position("Male") == 2);
  CHECK_THROWS_AS(idx.attribute_position("Bald"), ConfigError);
}

TEST_CASE("attribute file errors name the line") {
  CHECK(error_of("2\nA B\nx.jpg 1 1\n").find("attrs.txt") != std::string::npos);
  CHECK(error_of("1\nA B\nx.jpg 1 2\n").find(":3") != std::string::npos);
  CHECK(error_of("1\nA B\nx.jpg 1\n").find(":3") != std::string::npos);
  CHECK(error_of("2\nA\nx.jpg 1\nx.jpg -1\n").find(":4") != std::string::npos);
  CHECK(!error_of("").empty());
  CHECK(!error_of("abc\nA\n").empty());
}

TEST_CASE("predicate evaluation table") {
  const std::vector<std::string> names{"A", "B", "C"};
  struct Row {
    const char* expr;
    std::vector<std::uint8_t> attrs;
    bool expected;
  };
  const std::vector<Row> rows{
      {"A", {1, 0, 0}, true},          {"!A", {1, 0, 0}, false},         {"A & B", {1, 0, 0}, false},
      {"A | B", {0, 1, 0}, true},      {"A & !B", {1, 0, 1}, true},      {"!(A | B)", {0, 0, 1}, true},
      {"A | B & C", {1, 0, 0}, true},  {"(A | B) & C", {1, 0, 0}, false}, {"true", {0, 0, 0}, true},
      {"false", {1, 1, 1}, false},     {"!!C", {0, 0, 1}, true},          {"A&B&C", {1, 1, 1}, true},
  };
  for (const auto& r : rows) {
    CAPTURE(r.expr);
    const auto p = AttributePredicate::parse(r.expr);
    CHECK(p.evaluate(r.attrs, names) == r.expected);
    CHECK(p.evaluate_bound(r.attrs, p.bind(names)) == r.expected);
  }
}

TEST_CASE("predicate syntax errors") {
  for (const char* bad : {"", "A &", "(A", "A B", "A | | B", "&A", ")"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(AttributePredicate::parse(bad), ConfigError);
  }
  CHECK_THROWS_AS(AttributePredicate::parse("Nope").bind({"A"}), ConfigError);
  CHECK(AttributePredicate::parse("false").is_constant_false());
  CHECK(AttributePredicate::parse("Smiling & (Blond_Hair | Brown_Hair)").referenced_names().size() == 3);
}

TEST_CASE("experiment one membership on six faces") {
  const auto idx = parse(kSixFaces);
  BuildOptions options;
  options.eval_fraction = 0.0;
  const auto sets = build_marginal_sets(idx, celeba_experiment_one(), options);
  // Face 4 wears glasses and smiles: excluded from every domain.
  CHECK(sets.at("no_glasses").train == std::vector<std::string>{"000001.jpg", "000003.jpg", "000005.jpg", "000006.jpg"});
  CHECK(sets.at("glasses").train == std::vector<std::string>{"000002.jpg"});
  CHECK(sets.at("smiling").train == std::vector<std::string>{"000003.jpg", "000006.jpg"});
  CHECK(sets.at("not_smiling").train == std::vector<std::string>{"000001.jpg", "000002.jpg", "000005.jpg"});
  CHECK(count_exclusion_violations(idx, celeba_experiment_one(), sets) == 0);
}

TEST_CASE("empty domain is a configuration error") {
  const auto idx = parse("2\nEyeglasses Smiling\na.jpg -1 1\nb.jpg -1 -1\n");
  CHECK_THROWS_AS(build_marginal_sets(idx, celeba_experiment_one(), {}), ConfigError);
}

TEST_CASE("unknown attribute in a domain predicate") {
  const auto idx = parse("1\nEyeglasses\na.jpg 1\n");
  CHECK_THROWS_AS(build_marginal_sets(idx, celeba_experiment_one(), {}), ConfigError);
}

TEST_CASE("evaluation split is stable and order independent") {
  int eval = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto id = std::to_string(i) + ".jpg";
    CHECK(is_eval_image(id, 0.1) == is_eval_image(id, 0.1));
    eval += is_eval_image(id, 0.1);
  }
  CHECK(eval > 300);
  CHECK(eval < 500);
  CHECK_FALSE(is_eval_image("x.jpg", 0.0));
}

TEST_CASE("disjoint pairs drop images claimed by the first pair") {
  const auto idx = parse(kSixFaces);
  BuildOptions options;
  options.eval_fraction = 0.0;
  options.disjoint_pairs = true;
  // Every non-excluded face is in the glasses pair, so the smile pair comes out empty.
  CHECK_THROWS_AS(build_marginal_sets(idx, celeba_experiment_one(), options), ConfigError);

  DomainSpec spec;
  spec.domain_names = {"male_glasses", "male_plain", "smiling", "not_smiling"};
  spec.predicates = {AttributePredicate::parse("Male & Eyeglasses"), AttributePredicate::parse("Male & !Eyeglasses"),
                     AttributePredicate::parse("Smiling"), AttributePredicate::parse("!Smiling")};
  spec.exclusion = AttributePredicate::parse("false");
  spec.pairing = {{0, 1}, {2, 3}};
  const auto sets = build_marginal_sets(idx, spec, options);
  CHECK(sets.at("male_glasses").train == std::vector<std::string>{"000002.jpg"});
  CHECK(sets.at("male_plain").train == std::vector<std::string>{"000001.jpg", "000006.jpg"});
  CHECK(sets.at("smiling").train == std::vector<std::string>{"000003.jpg", "000004.jpg"});
  CHECK(sets.at("not_smiling").train == std::vector<std::string>{"000005.jpg"});
  options.disjoint_pairs = false;
  CHECK(build_marginal_sets(idx, spec, options).at("smiling").train.size() == 3);
}

TEST_CASE("domain spec json round trip is strict") {
  const auto spec = celeba_experiment_two();
  const auto back = DomainSpec::from_json(spec.to_json());
  CHECK(back.domain_names == spec.domain_names);
  CHECK(back.exclusion.text() == spec.exclusion.text());
  CHECK(back.pairing == spec.pairing);
  auto j = spec.to_json();
  j["extra"] = 1;
  CHECK_THROWS_AS(DomainSpec::from_json(j), ConfigError);
  CHECK(spec.partner(2) == 3);
}

TEST_CASE("manifest content hash is deterministic") {
  const auto idx = parse(kSixFaces);
  const auto a = build_marginal_sets(idx, celeba_experiment_one(), {});
  const auto b = build_marginal_sets(idx, celeba_experiment_one(), {});
  CHECK(dataset_manifest(celeba_experiment_one(), a, 0, {}).dump() ==
        dataset_manifest(celeba_experiment_one(), b, 0, {}).dump());
  CHECK(a.content_hash().size() == 64);
}
