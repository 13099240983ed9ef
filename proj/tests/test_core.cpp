#include <catch2/catch_amalgamated.hpp>

#include "annodist/core.hpp"
#include "annodist/rng.hpp"

using namespace annodist;

TEST_CASE("duplicate annotations merge to their mean in first-seen order") {
  std::vector<AnnotationRecord> records = {
      {"u1", "a1", 0.2, 0.4},
      {"u1", "a2", -0.5, 0.1},
      {"u1", "a1", 0.4, 0.0},
  };
  auto merged = merge_duplicate_annotations(records);
  REQUIRE(merged.size() == 2);
  REQUIRE(merged[0].annotator_id == "a1");
  REQUIRE(merged[0].activation == Catch::Approx(0.3));
  REQUIRE(merged[0].valence == Catch::Approx(0.2));
  REQUIRE(merged[1].annotator_id == "a2");
}

TEST_CASE("single record merges to itself") {
  std::vector<AnnotationRecord> records = {{"u1", "a1", 0.7, -0.2}};
  auto merged = merge_duplicate_annotations(records);
  REQUIRE(merged.size() == 1);
  REQUIRE(merged[0].activation == 0.7);
  REQUIRE(merged[0].valence == -0.2);
}

TEST_CASE("symmetric triplet merges to zero") {
  std::vector<AnnotationRecord> records = {
      {"u1", "a1", -1.0, 0.0}, {"u1", "a1", 0.0, 0.0}, {"u1", "a1", 1.0, 0.0}};
  auto merged = merge_duplicate_annotations(records);
  REQUIRE(merged.size() == 1);
  REQUIRE(merged[0].activation == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("non-finite annotation is rejected with the record named") {
  std::vector<AnnotationRecord> records = {{"u9", "a3", std::nan(""), 0.0}};
  REQUIRE_THROWS_WITH(merge_duplicate_annotations(records),
                      Catch::Matchers::ContainsSubstring("u9") &&
                          Catch::Matchers::ContainsSubstring("a3"));
}

TEST_CASE("minmax scaling maps endpoints and midpoints") {
  auto s = minmax_scale({1.0, 4.0, 7.0}, 1.0, 7.0);
  REQUIRE(s[0] == Catch::Approx(-1.0));
  REQUIRE(s[1] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(s[2] == Catch::Approx(1.0));

  REQUIRE(minmax_scale({3.0}, 1.0, 5.0)[0] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(minmax_scale({2.0}, 0.0, 8.0)[0] == Catch::Approx(-0.5));
}

TEST_CASE("degenerate label range is rejected") {
  REQUIRE_THROWS_AS(minmax_scale({1.0}, 2.0, 2.0), DataError);
}

TEST_CASE("scale then unscale is the identity") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const double lo = rng.uniform(-10.0, 0.0);
    const double hi = lo + rng.uniform(0.5, 10.0);
    const double v = rng.uniform(lo, hi);
    const double round_trip = minmax_unscale_one(minmax_scale_one(v, lo, hi), lo, hi);
    REQUIRE(round_trip == Catch::Approx(v).margin(1e-12));
  }
}

namespace {

Corpus tiny_corpus() {
  Corpus c;
  Utterance u1;
  u1.utterance_id = "u1";
  u1.features = {0.1, 0.2};
  u1.annotations = {{"u1", "b", 0.5, 0.5}, {"u1", "a", -0.5, 0.1}};
  Utterance u2;
  u2.utterance_id = "u2";
  u2.features = {0.3, 0.4};
  u2.annotations = {{"u2", "a", 0.0, -1.0}};
  c.utterances = {u1, u2};
  c.split = {Split::train, Split::test};
  return c;
}

}  // namespace

TEST_CASE("finalize_corpus builds consensus and a contiguous annotator index") {
  Corpus c = tiny_corpus();
  finalize_corpus(c);
  REQUIRE(c.utterances[0].consensus_act == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(c.utterances[0].consensus_val == Catch::Approx(0.3));
  REQUIRE(c.num_annotators() == 2);
  REQUIRE(c.annotator_index.at("a") == 0);
  REQUIRE(c.annotator_index.at("b") == 1);
  REQUIRE(c.feature_dim == 2);
  REQUIRE(c.annotator_coverage_ok);  // test annotator "a" appears in train
}

TEST_CASE("coverage flag drops when a test annotator is unseen in train") {
  Corpus c = tiny_corpus();
  c.utterances[1].annotations[0].annotator_id = "stranger";
  c.utterances[1].annotations[0].utterance_id = "u2";
  finalize_corpus(c);
  REQUIRE_FALSE(c.annotator_coverage_ok);
}

TEST_CASE("corpus construction is deterministic") {
  Corpus a = tiny_corpus(), b = tiny_corpus();
  finalize_corpus(a);
  finalize_corpus(b);
  REQUIRE(a.annotator_index == b.annotator_index);
  REQUIRE(a.utterances[0].consensus_act == b.utterances[0].consensus_act);
}

TEST_CASE("feature dimension mismatch is rejected") {
  Corpus c = tiny_corpus();
  c.utterances[1].features = {0.3};
  REQUIRE_THROWS_AS(finalize_corpus(c), DataError);
}
