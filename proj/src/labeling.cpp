#include "latent_forge/labeling.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <thread>
#include <unordered_set>

#include "latent_forge/embedding.hpp"

namespace latent_forge {

std::string_view to_string(LabelSource s) {
  switch (s) {
    case LabelSource::generative: return "generative";
    case LabelSource::classifier: return "classifier";
    case LabelSource::human: return "human";
  }
  return "generative";
}

LabelSource label_source_from_string(std::string_view s) {
  if (s == "generative") return LabelSource::generative;
  if (s == "classifier") return LabelSource::classifier;
  if (s == "human") return LabelSource::human;
  throw DataError("unknown label source '" + std::string(s) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && ws(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && ws(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string fold_case(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

nlohmann::json to_json(const LabelCandidate& c) {
  nlohmann::json j{{"text", c.text}, {"source", std::string(to_string(c.source))},
                   {"proposer", c.proposer}};
  if (c.confidence) j["confidence"] = *c.confidence;
  if (c.description) j["description"] = *c.description;
  return j;
}

LabelCandidate label_candidate_from_json(const nlohmann::json& j) {
  LabelCandidate c;
  c.text = j.at("text").get<std::string>();
  c.source = label_source_from_string(j.value("source", std::string("generative")));
  c.proposer = j.value("proposer", std::string{});
  if (j.contains("confidence") && !j.at("confidence").is_null()) {
    c.confidence = j.at("confidence").get<double>();
  }
  if (j.contains("description") && !j.at("description").is_null()) {
    c.description = j.at("description").get<std::string>();
  }
  return c;
}

std::vector<LabelCandidate> parse_proposer_reply(const nlohmann::json& reply,
                                                 LabelSource source,
                                                 const std::string& proposer) {
  if (!reply.is_object() || !reply.contains("candidates") || !reply.at("candidates").is_array()) {
    throw EndpointError(proposer + ": reply lacks a candidates array");
  }
  std::vector<LabelCandidate> out;
  for (const auto& item : reply.at("candidates")) {
    if (!item.is_object() || !item.contains("text") || !item.at("text").is_string()) {
      throw EndpointError(proposer + ": candidate without text");
    }
    LabelCandidate c;
    c.text = trim(item.at("text").get_ref<const std::string&>());
    if (c.text.empty()) continue;
    c.source = source;
    c.proposer = proposer;
    if (item.contains("confidence") && !item.at("confidence").is_null()) {
      if (!item.at("confidence").is_number()) {
        throw EndpointError(proposer + ": non-numeric confidence");
      }
      const double conf = item.at("confidence").get<double>();
      if (!(conf >= 0.0 && conf <= 1.0)) {
        throw EndpointError(proposer + ": confidence outside [0, 1]");
      }
      c.confidence = conf;
    }
    if (item.contains("description") && item.at("description").is_string()) {
      c.description = item.at("description").get<std::string>();
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<LabelCandidate> dedupe_candidates(std::vector<LabelCandidate> candidates) {
  std::unordered_set<std::string> seen;
  std::vector<LabelCandidate> out;
  for (auto& c : candidates) {
    if (seen.insert(fold_case(c.text)).second) out.push_back(std::move(c));
  }
  return out;
}

nlohmann::json proposer_request(const FeatureSummary& feature, const CollectOptions& options) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& ex : feature.top_examples) {
    paths.push_back(options.audio_root.empty() ? ex.track_id
                                               : (options.audio_root / ex.track_id).string());
  }
  return {{"feature_id", feature.feature_id},
          {"example_audio_paths", std::move(paths)},
          {"top_n_tags", options.top_n_tags}};
}

CandidateCollection collect_candidates(const FeatureSummary& feature,
                                       std::span<const Proposer> proposers,
                                       const CollectOptions& options) {
  if (proposers.empty()) throw ConfigError("labeling: no proposers configured");
  if (feature.top_examples.empty()) {
    throw DataError("labeling: feature " + std::to_string(feature.feature_id) +
                    " has no top examples");
  }
  const nlohmann::json request = proposer_request(feature, options);

  struct Outcome {
    std::vector<LabelCandidate> candidates;
    std::optional<std::string> failure;
  };
  std::vector<Outcome> outcomes(proposers.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < proposers.size(); i = next++) {
      const Proposer& p = proposers[i];
      try {
        if (p.endpoint == nullptr) throw EndpointError(p.name + ": no endpoint");
        outcomes[i].candidates = parse_proposer_reply(p.endpoint->call(request), p.source, p.name);
      } catch (const std::exception& e) {
        outcomes[i].failure = e.what();
      }
    }
  };
  const std::size_t in_flight =
      std::clamp<std::size_t>(options.max_in_flight, 1, proposers.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < in_flight; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  CandidateCollection result;
  std::vector<LabelCandidate> all;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].failure) {
      result.warnings.push_back("proposer '" + proposers[i].name + "' failed: " +
                                *outcomes[i].failure);
    } else {
      for (auto& c : outcomes[i].candidates) all.push_back(std::move(c));
    }
  }
  if (result.warnings.size() == proposers.size()) {
    std::string msg = "labeling: all proposers failed for feature " +
                      std::to_string(feature.feature_id) + ":";
    for (const auto& w : result.warnings) msg += "\n  " + w;
    throw DataError(msg);
  }
  result.candidates = dedupe_candidates(std::move(all));
  return result;
}

std::vector<std::vector<float>> Embedder::request(const char* key,
                                                  std::span<const std::string> items) {
  if (items.empty()) return {};
  nlohmann::json req;
  req[key] = std::vector<std::string>(items.begin(), items.end());
  const nlohmann::json reply = endpoint_->call(req);
  const std::string who = endpoint_->describe();
  if (!reply.contains("embeddings") || !reply.at("embeddings").is_array()) {
    throw EndpointError(who + ": reply lacks an embeddings array");
  }
  std::vector<std::vector<float>> out;
  try {
    out = reply.at("embeddings").get<std::vector<std::vector<float>>>();
  } catch (const nlohmann::json::exception&) {
    throw EndpointError(who + ": embeddings must be arrays of numbers");
  }
  if (out.size() != items.size()) {
    throw EndpointError(who + ": expected " + std::to_string(items.size()) +
                        " embeddings, got " + std::to_string(out.size()));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].empty() || out[i].size() != out.front().size()) {
      throw DimensionError(who + ": embeddings differ in dimensionality");
    }
    require_unit_norm(out[i], "embedding for '" + items[i] + "'");
  }
  return out;
}

std::vector<std::vector<float>> Embedder::embed_texts(std::span<const std::string> texts) {
  return request("texts", texts);
}

std::vector<std::vector<float>> Embedder::embed_audio(std::span<const std::string> paths) {
  return request("audio_paths", paths);
}

LabeledFeature rank_labels(std::uint32_t feature_id, std::span<const LabelCandidate> candidates,
                           std::span<const std::vector<float>> example_embeddings,
                           std::span<const std::vector<float>> candidate_embeddings) {
  if (candidates.empty()) throw DataError("rank_labels: empty candidate set");
  if (example_embeddings.empty()) throw DataError("rank_labels: no example embeddings");
  if (candidate_embeddings.size() != candidates.size()) {
    throw DimensionError("rank_labels: one embedding per candidate required");
  }
  const std::size_t dim = example_embeddings.front().size();
  for (const auto& e : example_embeddings) {
    if (e.size() != dim) throw DimensionError("rank_labels: example embeddings differ in size");
    require_unit_norm(e, "example embedding");
  }
  for (const auto& e : candidate_embeddings) {
    if (e.size() != dim) {
      throw DimensionError("rank_labels: candidate embedding has dimension " +
                           std::to_string(e.size()) + ", examples have " + std::to_string(dim));
    }
    require_unit_norm(e, "candidate embedding");
  }

  // Unit-norm inputs bound every cosine by 1 up to rounding; anything further
  // out means the inputs were not what they claimed to be.
  constexpr double kSlack = 1e-6;
  LabeledFeature out;
  out.feature_id = feature_id;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    AlignmentScore a;
    a.label = candidates[c];
    double sum = 0.0;
    for (const auto& ex : example_embeddings) {
      double s = dot(candidate_embeddings[c], ex);
      if (std::abs(s) > 1.0 + kSlack) throw DataError("rank_labels: cosine outside [-1, 1]");
      s = std::clamp(s, -1.0, 1.0);
      a.per_example_scores.push_back(s);
      sum += s;
    }
    a.score = sum / static_cast<double>(example_embeddings.size());
    out.candidates.push_back(std::move(a));
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < out.candidates.size(); ++c) {
    const auto& a = out.candidates[c];
    const auto& b = out.candidates[best];
    if (a.score > b.score || (a.score == b.score && a.label.text < b.label.text)) best = c;
  }
  out.best = best;
  out.max_score = out.candidates[best].score;
  return out;
}

nlohmann::json to_json(const LabeledFeature& f) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& a : f.candidates) {
    auto j = to_json(a.label);
    j["score"] = a.score;
    j["per_example_scores"] = a.per_example_scores;
    cands.push_back(std::move(j));
  }
  return {{"feature_id", f.feature_id},
          {"best", f.candidates.empty() ? std::string{} : f.best_label().label.text},
          {"max_score", f.max_score},
          {"candidates", std::move(cands)}};
}

LabeledFeature labeled_feature_from_json(const nlohmann::json& j) {
  LabeledFeature f;
  f.feature_id = j.at("feature_id").get<std::uint32_t>();
  f.max_score = j.at("max_score").get<double>();
  const std::string best = j.at("best").get<std::string>();
  for (const auto& c : j.at("candidates")) {
    AlignmentScore a;
    a.label = label_candidate_from_json(c);
    a.score = c.at("score").get<double>();
    a.per_example_scores = c.at("per_example_scores").get<std::vector<double>>();
    if (a.label.text == best) f.best = f.candidates.size();
    f.candidates.push_back(std::move(a));
  }
  return f;
}

std::vector<CoverageRow> score_threshold_report(std::span<const LabeledFeature> features,
                                                std::span<const double> thresholds) {
  std::vector<CoverageRow> rows;
  if (thresholds.empty()) return rows;
  if (features.empty()) throw DataError("coverage report: no labeled features");
  for (double t : thresholds) {
    CoverageRow r;
    r.threshold = t;
    for (const auto& f : features) {
      if (f.max_score >= t) ++r.covered;
    }
    r.coverage = static_cast<double>(r.covered) / static_cast<double>(features.size());
    rows.push_back(r);
  }
  return rows;
}

}  // namespace latent_forge
