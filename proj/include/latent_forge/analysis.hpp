#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/feature_pipeline.hpp"

namespace latent_forge {

// --- co-activation ---

enum class Relation { within_layer, cross_layer, cross_sae, cross_model };

std::string_view to_string(Relation r);

// Same SAE -> within-layer; same model and layer, different SAE -> cross-sae;
// same model, different layer -> cross-layer; different model -> cross-model.
Relation classify_relation(const SaeIdentity& a, const SaeIdentity& b);

struct CoactivationPair {
  std::uint32_t catalog_a = 0;
  std::uint32_t feature_a = 0;
  std::uint32_t catalog_b = 0;
  std::uint32_t feature_b = 0;
  Relation relation = Relation::within_layer;
  std::uint32_t overlap = 0;

  bool operator==(const CoactivationPair&) const = default;
};

// |S_a ∩ S_b| on track ids for every unordered pair of kept features
// (within and across catalogs), omitting zero overlaps. Ordered by
// (catalog_a, feature_a, catalog_b, feature_b) with (catalog_a, feature_a)
// lexicographically before (catalog_b, feature_b). All catalogs must share a
// corpus digest.
std::vector<CoactivationPair> coactivation_matrix(std::span<const FeatureCatalog> catalogs,
                                                  unsigned threads = 1);

void write_coactivation_csv(std::span<const CoactivationPair> pairs,
                            std::span<const FeatureCatalog> catalogs, std::ostream& out);

struct PairAggregate {
  std::uint64_t pairs = 0;
  std::uint64_t overlap_sum = 0;
  double mean_overlap() const {
    return pairs == 0 ? 0.0 : static_cast<double>(overlap_sum) / static_cast<double>(pairs);
  }
  bool operator==(const PairAggregate&) const = default;
};

struct CoactivationSummary {
  // relation -> overlap value -> pair count
  std::map<Relation, std::map<std::uint32_t, std::uint64_t>> histograms;
  // Cross-layer matrix per (model, sae config): (layer_a, layer_b) with
  // layer_a <= layer_b. Diagonal cells are always zero.
  std::map<std::string, std::map<std::pair<std::uint32_t, std::uint32_t>, PairAggregate>>
      layer_pairs;
  // Cross-SAE aggregates keyed by ordered SAE label pair.
  std::map<std::pair<std::string, std::string>, PairAggregate> sae_pairs;
  // Cross-model aggregates keyed by (fractional depth a, fractional depth b)
  // rounded to 2 decimals, when both models are known presets.
  std::map<std::pair<std::string, std::string>, PairAggregate> model_depth_pairs;
};

CoactivationSummary coactivation_summary(std::span<const CoactivationPair> pairs,
                                         std::span<const FeatureCatalog> catalogs);
nlohmann::json to_json(const CoactivationSummary& s);

// --- layer-of-origin probe ---

struct ProbeDataset {
  std::vector<std::string> layers;       // label names, index = class id
  std::vector<std::vector<float>> profiles;
  std::vector<std::uint32_t> labels;

  void validate(std::uint32_t folds) const;
};

// Builds samples from kept-feature profiles over the track ids shared by all
// inputs (sorted), labelled by the input's layer.
ProbeDataset build_probe_dataset(std::span<const FeatureProfiles> inputs);

struct ProbeOptions {
  std::uint32_t hidden_units = 64;
  std::uint32_t folds = 5;
  std::uint32_t epochs = 200;
  std::uint32_t batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation across folds
  std::uint64_t samples = 0;
  std::uint32_t classes = 0;
};

// Stratified k-fold cross-validation of a one-hidden-layer ReLU MLP with a
// softmax output trained on cross-entropy with Adam. Inputs are standardized
// with training-fold statistics.
ProbeReport train_layer_probe(const ProbeDataset& data, const ProbeOptions& options);
nlohmann::json to_json(const ProbeReport& r, const ProbeOptions& o);

}  // namespace latent_forge
