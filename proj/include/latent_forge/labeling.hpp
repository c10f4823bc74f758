#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/endpoints.hpp"
#include "latent_forge/feature_pipeline.hpp"

namespace latent_forge {

enum class LabelSource { generative, classifier, human };

std::string_view to_string(LabelSource s);
LabelSource label_source_from_string(std::string_view s);

struct LabelCandidate {
  std::string text;  // trimmed, non-empty
  LabelSource source = LabelSource::generative;
  std::optional<double> confidence;  // in [0, 1]
  std::optional<std::string> description;
  std::string proposer;  // endpoint name that produced it

  bool operator==(const LabelCandidate&) const = default;
};

nlohmann::json to_json(const LabelCandidate& c);
LabelCandidate label_candidate_from_json(const nlohmann::json& j);

// Parses a proposer reply {candidates: [{text, confidence?, description?}]}.
// Throws EndpointError on a malformed reply. Entries whose text trims to
// empty are skipped.
std::vector<LabelCandidate> parse_proposer_reply(const nlohmann::json& reply,
                                                 LabelSource source,
                                                 const std::string& proposer);

// Keeps the first occurrence of each text under case-insensitive exact
// comparison; order is otherwise preserved.
std::vector<LabelCandidate> dedupe_candidates(std::vector<LabelCandidate> candidates);

struct Proposer {
  std::string name;
  LabelSource source = LabelSource::generative;
  JsonEndpoint* endpoint = nullptr;
};

struct CollectOptions {
  std::filesystem::path audio_root;  // example path = audio_root / track_id
  std::uint32_t top_n_tags = 3;
  unsigned max_in_flight = 4;
};

struct CandidateCollection {
  std::vector<LabelCandidate> candidates;
  std::vector<std::string> warnings;  // one per failed proposer
};

nlohmann::json proposer_request(const FeatureSummary& feature, const CollectOptions& options);

// Queries every proposer (at most max_in_flight concurrently) and merges the
// replies in proposer order. Partial failure yields warnings; total failure
// throws DataError listing every failure.
CandidateCollection collect_candidates(const FeatureSummary& feature,
                                       std::span<const Proposer> proposers,
                                       const CollectOptions& options);

// Wraps an embedder endpoint, checking count, dimensionality, and unit norm.
class Embedder {
 public:
  explicit Embedder(JsonEndpoint& endpoint) : endpoint_(&endpoint) {}

  std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts);
  std::vector<std::vector<float>> embed_audio(std::span<const std::string> paths);

 private:
  std::vector<std::vector<float>> request(const char* key, std::span<const std::string> items);
  JsonEndpoint* endpoint_;
};

struct AlignmentScore {
  LabelCandidate label;
  double score = 0.0;
  std::vector<double> per_example_scores;

  bool operator==(const AlignmentScore&) const = default;
};

struct LabeledFeature {
  std::uint32_t feature_id = 0;
  std::vector<AlignmentScore> candidates;
  std::size_t best = 0;
  double max_score = 0.0;

  const AlignmentScore& best_label() const { return candidates.at(best); }
  bool operator==(const LabeledFeature&) const = default;
};

// Score = mean over examples of the dot product of unit vectors. Best is the
// maximum score, ties broken by the lexicographically smallest label text.
LabeledFeature rank_labels(std::uint32_t feature_id, std::span<const LabelCandidate> candidates,
                           std::span<const std::vector<float>> example_embeddings,
                           std::span<const std::vector<float>> candidate_embeddings);

nlohmann::json to_json(const LabeledFeature& f);
LabeledFeature labeled_feature_from_json(const nlohmann::json& j);

struct CoverageRow {
  double threshold = 0.0;
  std::uint64_t covered = 0;
  double coverage = 0.0;
};

// Fraction of features whose max_score >= threshold, per threshold.
std::vector<CoverageRow> score_threshold_report(std::span<const LabeledFeature> features,
                                                std::span<const double> thresholds);

}  // namespace latent_forge
