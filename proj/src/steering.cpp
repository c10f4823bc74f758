#include "latent_forge/steering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <unordered_map>

#include "latent_forge/embedding.hpp"

namespace latent_forge {

bool bit_identical(const SteeringVector& a, const SteeringVector& b) {
  return a.sae == b.sae && a.feature_id == b.feature_id &&
         bit_equal(std::span(&a.alpha, 1), std::span(&b.alpha, 1)) &&
         bit_equal(std::span(&a.beta, 1), std::span(&b.beta, 1)) &&
         a.beta_rule == b.beta_rule && bit_equal(a.direction, b.direction) &&
         bit_equal(a.delta, b.delta) && a.control == b.control &&
         a.control_seed == b.control_seed;
}

SteeringVector make_steering_vector(SaeIdentity sae, std::uint32_t feature_id,
                                    std::vector<float> direction, float beta,
                                    float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    throw ConfigError("steering: alpha must be in [0, 1]");
  }
  if (!(beta > 0.0f) || !std::isfinite(beta)) {
    throw DataError("steering: beta must be positive and finite");
  }
  SteeringVector v;
  v.sae = std::move(sae);
  v.feature_id = feature_id;
  v.alpha = alpha;
  v.beta = beta;
  v.direction = std::move(direction);
  v.delta.resize(v.direction.size());
  for (std::size_t c = 0; c < v.direction.size(); ++c) {
    const float unit = beta * v.direction[c];
    v.delta[c] = alpha * unit;
  }
  return v;
}

float steering_beta(const SaeModel& model, const FeatureCatalog& catalog,
                    const ActivationCorpus& corpus, std::uint32_t feature_id) {
  require_input_dim(model, corpus.dim());
  if (feature_id >= model.latent_dim()) {
    throw DataError("steering: feature " + std::to_string(feature_id) +
                    " out of range");
  }
  if (!catalog.sae.checkpoint_digest.empty() &&
      catalog.sae.checkpoint_digest != checkpoint_digest(model)) {
    throw DataError("steering: catalog was built from a different checkpoint");
  }
  if (!catalog.corpus_digest.empty() && catalog.corpus_digest != track_set_digest(corpus)) {
    throw DataError("steering: corpus tracks differ from the catalog's validation corpus");
  }
  const FeatureSummary& s = catalog.feature(feature_id);
  if (s.verdict != Verdict::kept) {
    throw DataError("steering: feature " + std::to_string(feature_id) +
                    " was filtered out (" + std::string(to_string(s.verdict)) + ")");
  }
  std::unordered_map<std::string_view, const TrackActivations*> by_id;
  for (const auto& t : corpus.tracks) by_id.emplace(t.track_id, &t);
  float beta = 0.0f;
  for (const auto& ex : s.top_examples) {
    auto it = by_id.find(ex.track_id);
    if (it == by_id.end()) {
      throw DataError("steering: top example track '" + ex.track_id +
                      "' is not in the corpus");
    }
    const auto& track = *it->second;
    for (std::size_t t = 0; t < track.steps(); ++t) {
      const LatentCode code = encode(model, track.data.row(t));
      beta = std::max(beta, code.sparse[feature_id]);
    }
  }
  if (!(beta > 0.0f)) {
    throw DataError("steering: feature " + std::to_string(feature_id) +
                    " never activates on its listed examples (catalog/corpus mismatch)");
  }
  return beta;
}

SteeringVector build_steering_vector(const SaeModel& model, const FeatureCatalog& catalog,
                                     const ActivationCorpus& corpus,
                                     std::uint32_t feature_id, float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    throw ConfigError("steering: alpha must be in [0, 1]");
  }
  const float beta = steering_beta(model, catalog, corpus, feature_id);
  SaeIdentity sae = catalog.sae;
  return make_steering_vector(std::move(sae), feature_id,
                              model.decoder_column(feature_id), beta, alpha);
}

Matrix apply_steering(const Matrix& activations, const SteeringVector& vec) {
  if (activations.cols != vec.delta.size()) {
    throw DimensionError("apply_steering: dimension mismatch: activations d=" +
                         std::to_string(activations.cols) + ", vector d=" +
                         std::to_string(vec.delta.size()));
  }
  Matrix out = activations;
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (vec.delta[c] != 0.0f) row[c] += vec.delta[c];
    }
  }
  return out;
}

namespace {

double norm2(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

SteeringVector random_control_vector(const SteeringVector& vec, std::uint64_t seed) {
  const std::size_t d = vec.direction.size();
  if (d == 0) throw DataError("random control: empty direction");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> u(d);
  double n = 0.0;
  while (n == 0.0) {
    n = 0.0;
    for (auto& x : u) {
      x = gauss(rng);
      n += x * x;
    }
    n = std::sqrt(n);
  }
  const double dir_norm = norm2(vec.direction);
  const double delta_norm = norm2(vec.delta);
  SteeringVector out = vec;
  out.control = true;
  out.control_seed = seed;
  for (std::size_t c = 0; c < d; ++c) {
    out.direction[c] = static_cast<float>(u[c] / n * dir_norm);
    out.delta[c] = static_cast<float>(u[c] / n * delta_norm);
  }
  return out;
}

SteeringEvaluation evaluate_steering(std::uint32_t feature_id,
                                     std::span<const std::vector<float>> examples,
                                     std::span<const float> steered,
                                     std::span<const float> baseline) {
  if (examples.empty()) throw DataError("evaluate_steering: no example embeddings");
  if (steered.size() != baseline.size()) {
    throw DimensionError("evaluate_steering: steered/baseline dimension mismatch");
  }
  require_unit_norm(steered, "steered embedding");
  require_unit_norm(baseline, "baseline embedding");
  SteeringEvaluation e;
  e.feature_id = feature_id;
  for (const auto& ex : examples) {
    if (ex.size() != steered.size()) {
      throw DimensionError("evaluate_steering: example embedding dimension mismatch");
    }
    require_unit_norm(ex, "example embedding");
    e.sim_steered += dot(ex, steered);
    e.sim_baseline += dot(ex, baseline);
  }
  e.sim_steered /= static_cast<double>(examples.size());
  e.sim_baseline /= static_cast<double>(examples.size());
  e.improvement = e.sim_steered - e.sim_baseline;
  e.improved = e.improvement > 0.0;
  return e;
}

std::string SteeringRollup::formatted() const {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%llu/%llu (%.1f%%)",
                static_cast<unsigned long long>(improved),
                static_cast<unsigned long long>(total), 100.0 * fraction());
  return buf;
}

SteeringRollup rollup(std::string sae_label, std::span<const SteeringEvaluation> evals) {
  SteeringRollup r;
  r.sae_label = std::move(sae_label);
  r.total = evals.size();
  for (const auto& e : evals) r.improved += e.improved ? 1 : 0;
  return r;
}

nlohmann::json to_json(const SteeringVector& v) {
  nlohmann::json j = {{"sae", to_json(v.sae)},
                      {"feature_id", v.feature_id},
                      {"alpha", v.alpha},
                      {"beta", v.beta},
                      {"beta_rule", v.beta_rule},
                      {"direction", v.direction},
                      {"delta", v.delta}};
  if (v.control) {
    j["control"] = {{"kind", "random_direction_matched_norm"}, {"seed", v.control_seed}};
  }
  return j;
}

SteeringVector steering_vector_from_json(const nlohmann::json& j) {
  try {
    SteeringVector v;
    v.sae = sae_identity_from_json(j.at("sae"));
    v.feature_id = j.at("feature_id").get<std::uint32_t>();
    v.alpha = j.at("alpha").get<float>();
    v.beta = j.at("beta").get<float>();
    v.beta_rule = j.value("beta_rule", std::string("max_of_max"));
    v.direction = j.at("direction").get<std::vector<float>>();
    v.delta = j.at("delta").get<std::vector<float>>();
    if (j.contains("control")) {
      v.control = true;
      v.control_seed = j.at("control").at("seed").get<std::uint64_t>();
    }
    if (v.direction.size() != v.delta.size()) {
      throw FormatError("steering vector: direction and delta lengths differ");
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("steering vector: ") + e.what());
  }
}

void write_steering_vector(const SteeringVector& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << to_json(v).dump() << '\n';
  if (!out) throw DataError("steering vector: cannot write " + path.string());
}

SteeringVector read_steering_vector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("steering vector: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("steering vector: ") + e.what());
  }
  return steering_vector_from_json(j);
}

nlohmann::json to_json(const SteeringEvaluation& e) {
  return {{"feature_id", e.feature_id},
          {"sim_steered", e.sim_steered},
          {"sim_baseline", e.sim_baseline},
          {"improvement", e.improvement},
          {"improved", e.improved}};
}

SteeringEvaluation steering_evaluation_from_json(const nlohmann::json& j) {
  try {
    SteeringEvaluation e;
    e.feature_id = j.at("feature_id").get<std::uint32_t>();
    e.sim_steered = j.at("sim_steered").get<double>();
    e.sim_baseline = j.at("sim_baseline").get<double>();
    e.improvement = j.at("improvement").get<double>();
    e.improved = j.at("improved").get<bool>();
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("steering evaluation: ") + e.what());
  }
}

}  // namespace latent_forge
