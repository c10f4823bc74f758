#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/sae.hpp"

namespace latent_forge {

// delta = alpha * (beta * direction), direction = column j of W_d.
struct SteeringVector {
  SaeIdentity sae;
  std::uint32_t feature_id = 0;
  float alpha = 0.0f;
  float beta = 0.0f;
  std::string beta_rule = "max_of_max";
  std::vector<float> direction;
  std::vector<float> delta;
  bool control = false;        // random-direction matched-norm twin
  std::uint64_t control_seed = 0;

  bool operator==(const SteeringVector&) const = default;
};

bool bit_identical(const SteeringVector& a, const SteeringVector& b);

// Builds delta from direction/beta/alpha. alpha must be in [0, 1].
SteeringVector make_steering_vector(SaeIdentity sae, std::uint32_t feature_id,
                                    std::vector<float> direction, float beta,
                                    float alpha);

// Max over the feature's top-example tracks of the max-over-time sparse
// activation, recomputed by encoding those tracks.
float steering_beta(const SaeModel& model, const FeatureCatalog& catalog,
                    const ActivationCorpus& corpus, std::uint32_t feature_id);

SteeringVector build_steering_vector(const SaeModel& model, const FeatureCatalog& catalog,
                                     const ActivationCorpus& corpus,
                                     std::uint32_t feature_id, float alpha);

// Adds delta to every row. Zero delta components leave entries untouched, so
// alpha = 0 is a bit-exact identity.
Matrix apply_steering(const Matrix& activations, const SteeringVector& vec);

// Same norm, direction uniform on the unit sphere; deterministic per seed.
SteeringVector random_control_vector(const SteeringVector& vec, std::uint64_t seed);

struct SteeringEvaluation {
  std::uint32_t feature_id = 0;
  double sim_steered = 0.0;
  double sim_baseline = 0.0;
  double improvement = 0.0;
  bool improved = false;

  bool operator==(const SteeringEvaluation&) const = default;
};

// Embeddings must be unit-normalized and share one dimensionality.
SteeringEvaluation evaluate_steering(std::uint32_t feature_id,
                                     std::span<const std::vector<float>> examples,
                                     std::span<const float> steered,
                                     std::span<const float> baseline);

struct SteeringRollup {
  std::string sae_label;
  std::uint64_t improved = 0;
  std::uint64_t total = 0;
  double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(improved) / static_cast<double>(total);
  }
  // "46/131 (35.1%)"
  std::string formatted() const;
};

SteeringRollup rollup(std::string sae_label, std::span<const SteeringEvaluation> evals);

nlohmann::json to_json(const SteeringVector& v);
SteeringVector steering_vector_from_json(const nlohmann::json& j);
void write_steering_vector(const SteeringVector& v, const std::filesystem::path& path);
SteeringVector read_steering_vector(const std::filesystem::path& path);

nlohmann::json to_json(const SteeringEvaluation& e);
SteeringEvaluation steering_evaluation_from_json(const nlohmann::json& j);

}  // namespace latent_forge
