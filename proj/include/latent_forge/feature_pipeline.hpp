#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/sae.hpp"

namespace latent_forge {

struct FilterPolicy {
  double tau = 0.0;
  double theta_max = 0.25;
  double theta_min = 0.01;
  std::uint32_t top_n = 10;

  void validate() const;
  bool operator==(const FilterPolicy&) const = default;
};

enum class Verdict { kept, inactive, ubiquitous, obscure };

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

// inactive iff r == 0, ubiquitous iff r > theta_max, obscure iff
// 0 < r < theta_min, kept otherwise.
Verdict classify_rate(double rate, const FilterPolicy& policy);

// Per (feature, track) statistics over the sparse code, feature-major.
struct TrackStats {
  std::uint32_t latent_dim = 0;
  std::vector<std::string> track_ids;
  std::vector<double> mean;         // mu[i * N + j]
  std::vector<float> max;           // max over time of z_i
  std::vector<std::uint8_t> active; // max > tau

  std::size_t n_tracks() const { return track_ids.size(); }
  std::size_t at(std::uint32_t feature, std::size_t track) const {
    return static_cast<std::size_t>(feature) * track_ids.size() + track;
  }
};

TrackStats compute_track_stats(const SaeModel& model, const ActivationCorpus& corpus,
                               const FilterPolicy& policy, unsigned threads = 1);

struct TopExample {
  std::string track_id;
  double mu = 0.0;
  float max = 0.0f;

  bool operator==(const TopExample&) const = default;
};

// Active tracks ranked by mu descending, ties by track_id ascending.
std::vector<TopExample> select_top_examples(const TrackStats& stats,
                                            std::uint32_t feature,
                                            std::uint32_t top_n);

struct FeatureSummary {
  std::uint32_t feature_id = 0;
  double rate = 0.0;
  std::uint64_t active_tracks = 0;
  Verdict verdict = Verdict::inactive;
  double mean_strength = 0.0;  // mean mu over active tracks
  std::vector<TopExample> top_examples;

  bool operator==(const FeatureSummary&) const = default;
};

struct SaeIdentity {
  std::string model_name;
  std::uint32_t layer_index = 0;
  std::uint32_t epsilon = 0;
  std::uint32_t k = 0;
  std::string checkpoint_digest;

  // "model/L<layer>/e<eps>/k<k>", the label used in reports.
  std::string label() const;
  bool same_config(const SaeIdentity& o) const {
    return epsilon == o.epsilon && k == o.k;
  }
  bool operator==(const SaeIdentity&) const = default;
};

nlohmann::json to_json(const SaeIdentity& id);
SaeIdentity sae_identity_from_json(const nlohmann::json& j);
SaeIdentity make_identity(const SaeModel& model, const CorpusManifest& manifest);

struct VerdictCounts {
  std::uint64_t kept = 0, inactive = 0, ubiquitous = 0, obscure = 0;
  std::uint64_t total() const { return kept + inactive + ubiquitous + obscure; }
};

struct FeatureCatalog {
  SaeIdentity sae;
  FilterPolicy policy;
  std::string corpus_digest;
  std::uint64_t n_tracks = 0;
  std::vector<FeatureSummary> summaries;

  VerdictCounts counts() const;
  const FeatureSummary& feature(std::uint32_t id) const;
  bool operator==(const FeatureCatalog&) const = default;
};

FeatureCatalog summarize_and_filter(const TrackStats& stats, const FilterPolicy& policy,
                                    SaeIdentity sae, std::string corpus_digest);

FeatureCatalog build_catalog(const SaeModel& model, const ActivationCorpus& corpus,
                             const FilterPolicy& policy, unsigned threads = 1);

// JSON Lines: header object, then one object per feature.
void write_catalog(const FeatureCatalog& catalog, std::ostream& out);
FeatureCatalog read_catalog(std::istream& in);
void write_catalog_file(const FeatureCatalog& catalog, const std::filesystem::path& path);
FeatureCatalog read_catalog_file(const std::filesystem::path& path);

struct PrevalencePoint {
  std::uint32_t feature_id = 0;
  double rate = 0.0;
  double mean_strength = 0.0;
  Verdict verdict = Verdict::inactive;
};

struct FeatureCountRow {
  std::string model_name;
  std::uint32_t layer_index = 0;
  std::uint32_t epsilon = 0;
  std::uint32_t k = 0;
  VerdictCounts counts;
};

struct PrevalenceReport {
  std::vector<PrevalencePoint> points;  // every feature, pre-filter view
  FeatureCountRow row;
};

PrevalenceReport prevalence_report(const FeatureCatalog& catalog);

// One row per catalog, ordered by (model, epsilon, k, layer).
std::vector<FeatureCountRow> feature_count_table(std::span<const FeatureCatalog> catalogs);
void write_feature_count_csv(std::span<const FeatureCountRow> rows, std::ostream& out);
nlohmann::json prevalence_plot_data(std::span<const FeatureCatalog> catalogs);

// Kept features' per-track mu vectors, the "activation profile" used by the
// layer probe.
struct FeatureProfiles {
  SaeIdentity sae;
  std::vector<std::string> track_ids;
  std::vector<std::uint32_t> feature_ids;
  std::vector<std::vector<double>> profiles;
};

FeatureProfiles kept_feature_profiles(const TrackStats& stats,
                                      const FeatureCatalog& catalog);
nlohmann::json to_json(const FeatureProfiles& p);
FeatureProfiles feature_profiles_from_json(const nlohmann::json& j);

}  // namespace latent_forge
