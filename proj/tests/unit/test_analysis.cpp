#include <doctest.h>

#include <random>
#include <sstream>

#include "latent_forge/analysis.hpp"
#include "../oracles/oracles.hpp"

using namespace latent_forge;

namespace {

FeatureSummary kept(std::uint32_t id, std::vector<std::string> tracks) {
  FeatureSummary s;
  s.feature_id = id;
  s.verdict = Verdict::kept;
  for (auto& t : tracks) s.top_examples.push_back({std::move(t), 1.0, 1.0f});
  return s;
}

FeatureCatalog catalog(SaeIdentity id, std::vector<FeatureSummary> s) {
  FeatureCatalog c;
  c.sae = std::move(id);
  c.corpus_digest = "same";
  c.summaries = std::move(s);
  return c;
}

std::vector<std::string> ids(int from, int to) {
  std::vector<std::string> out;
  for (int i = from; i < to; ++i) out.push_back("t" + std::to_string(i));
  return out;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("relations between SAEs") {
  const SaeIdentity a{"musicgen-large", 12, 32, 100, "x"};
  CHECK(classify_relation(a, a) == Relation::within_layer);
  CHECK(classify_relation(a, {"musicgen-large", 12, 4, 32, "y"}) == Relation::cross_sae);
  CHECK(classify_relation(a, {"musicgen-large", 24, 32, 100, "z"}) == Relation::cross_layer);
  CHECK(classify_relation(a, {"musicgen-small", 12, 32, 100, "x"}) == Relation::cross_model);
  CHECK(to_string(Relation::cross_layer) == "cross-layer");
}

TEST_CASE("two features sharing five of ten top tracks overlap by five") {
  const auto a = catalog({"musicgen-large", 12, 32, 100, "x"},
                         {kept(3, ids(0, 10)), kept(8, ids(5, 15))});
  const std::vector<FeatureCatalog> cats{a};
  const auto pairs = coactivation_matrix(cats);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].feature_a == 3);
  CHECK(pairs[0].feature_b == 8);
  CHECK(pairs[0].overlap == 5);
  CHECK(pairs[0].relation == Relation::within_layer);
}

TEST_CASE("non-kept features are ignored and mixed corpora refused") {
  auto f = kept(1, ids(0, 4));
  f.verdict = Verdict::ubiquitous;
  const auto a = catalog({"m", 0, 1, 1, "a"}, {f, kept(2, ids(0, 4))});
  auto b = catalog({"m", 1, 1, 1, "b"}, {kept(0, ids(2, 6))});
  std::vector<FeatureCatalog> cats{a, b};
  const auto pairs = coactivation_matrix(cats);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].overlap == 2);
  CHECK(pairs[0].relation == Relation::cross_layer);
  cats[1].corpus_digest = "other";
  CHECK_THROWS_AS(coactivation_matrix(cats), DataError);
}

TEST_CASE("matrix agrees with the naive oracle for any thread count") {
  std::mt19937_64 rng(21);
  std::vector<FeatureCatalog> cats;
  for (std::uint32_t l : {2u, 12u, 12u}) {
    std::vector<FeatureSummary> feats;
    for (std::uint32_t f = 0; f < 25; ++f) {
      auto pool = ids(0, 30);
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(1 + rng() % 10);
      feats.push_back(kept(f, pool));
    }
    cats.push_back(catalog({"musicgen-large", l, 32, 100, std::to_string(cats.size())}, feats));
  }
  const auto want = oracle::naive_coactivation(cats);
  for (unsigned threads : {1u, 3u, 8u}) {
    const auto got = coactivation_matrix(cats, threads);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].overlap == want[i].overlap);
      CHECK(to_string(got[i].relation) == want[i].relation);
    }
  }
}

TEST_CASE("summary buckets pairs per relation and layer") {
  const auto a = catalog({"musicgen-large", 12, 32, 100, "a"}, {kept(0, ids(0, 6))});
  const auto b = catalog({"musicgen-large", 24, 32, 100, "b"}, {kept(0, ids(3, 9))});
  const auto c = catalog({"musicgen-small", 6, 32, 100, "c"}, {kept(0, ids(0, 2))});
  const std::vector<FeatureCatalog> cats{a, b, c};
  const auto pairs = coactivation_matrix(cats);
  const auto s = coactivation_summary(pairs, cats);
  CHECK(s.histograms.at(Relation::cross_layer).at(3) == 1);
  CHECK(s.histograms.at(Relation::cross_model).at(2) == 1);
  const auto& layers = s.layer_pairs.begin()->second;
  CHECK(layers.at({12, 24}).overlap_sum == 3);
  CHECK(!s.model_depth_pairs.empty());
  const auto j = to_json(s);
  CHECK(j.contains("histograms"));
  std::ostringstream csv;
  write_coactivation_csv(pairs, cats, csv);
  const auto text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + static_cast<long>(pairs.size()));
}

TEST_CASE("probe dataset validation") {
  ProbeDataset d;
  CHECK_THROWS_AS(d.validate(5), DataError);
  d.layers = {"L1", "L2"};
  d.profiles = {{1, 2}, {3, 4}, {5, 6}, {7, 8}};
  d.labels = {0, 0, 0, 0};
  CHECK_THROWS_AS(d.validate(2), DataError);  // one class
  d.labels = {0, 1, 0, 1};
  CHECK_NOTHROW(d.validate(2));
  CHECK_THROWS(d.validate(3));   // fewer samples per class than folds
  CHECK_THROWS(d.validate(1));
  d.profiles[2] = {1};
  CHECK_THROWS_AS(d.validate(2), DataError);
}

TEST_CASE("probe learns an easy two-layer split") {
  std::mt19937_64 rng(22);
  std::normal_distribution<float> n(0.0f, 0.3f);
  ProbeDataset d;
  d.layers = {"L2", "L12"};
  for (int i = 0; i < 60; ++i) {
    const std::uint32_t y = i % 2;
    d.profiles.push_back({float(y) * 2 + n(rng), n(rng), 1.0f - float(y) + n(rng)});
    d.labels.push_back(y);
  }
  ProbeOptions o;
  o.epochs = 50;
  o.folds = 3;
  const auto r = train_layer_probe(d, o);
  CHECK(r.fold_accuracy.size() == 3);
  CHECK(r.mean_accuracy > 0.9);
  CHECK(r.classes == 2);
  const auto again = train_layer_probe(d, o);
  CHECK(again.fold_accuracy == r.fold_accuracy);
  CHECK(to_json(r, o).contains("mean_accuracy"));
}

TEST_CASE("probe dataset from profiles intersects tracks") {
  FeatureProfiles a, b;
  a.sae = {"m", 2, 1, 1, "a"};
  a.track_ids = {"x", "y", "z"};
  a.feature_ids = {0};
  a.profiles = {{1, 2, 3}};
  b.sae = {"m", 6, 1, 1, "b"};
  b.track_ids = {"z", "y"};
  b.feature_ids = {4, 5};
  b.profiles = {{9, 8}, {7, 6}};
  const std::vector<FeatureProfiles> in{a, b};
  const auto d = build_probe_dataset(in);
  CHECK(d.layers == std::vector<std::string>{"L2", "L6"});
  REQUIRE(d.profiles.size() == 3);
  CHECK(d.profiles[0] == std::vector<float>{2, 3});
  CHECK(d.profiles[1] == std::vector<float>{8, 9});
  CHECK(d.labels == std::vector<std::uint32_t>{0, 1, 1});
}

}
