#pragma once

// Random inputs shared by the unit and acceptance tests.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/sae.hpp"

namespace fixtures {

using namespace latent_forge;

inline ActivationCorpus random_corpus(std::mt19937_64& rng, std::uint32_t d, std::size_t tracks,
                                      std::size_t max_steps, const std::string& prefix = "t") {
  ActivationCorpus c;
  c.manifest.model_name = "fixture";
  c.manifest.d = d;
  std::uniform_int_distribution<std::size_t> steps(1, max_steps);
  std::normal_distribution<float> val(0.0f, 1.0f);
  for (std::size_t j = 0; j < tracks; ++j) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s%04zu", prefix.c_str(), j);
    TrackActivations t{id, Matrix(steps(rng), d)};
    for (auto& v : t.data.data) v = val(rng);
    c.tracks.push_back(std::move(t));
  }
  c.manifest.track_count = c.tracks.size();
  return c;
}

// Random weights including biases, so every parameter has a gradient.
inline SaeModel random_model(std::mt19937_64& rng, std::uint32_t d, std::uint32_t eps,
                             std::uint32_t k, float bias_shift = 0.0f) {
  SaeConfig cfg;
  cfg.d = d;
  cfg.epsilon = eps;
  cfg.k = k;
  cfg.seed = rng();
  SaeModel m = SaeModel::zeros(cfg);
  std::normal_distribution<float> w(0.0f, 1.0f / std::sqrt(static_cast<float>(d)));
  std::normal_distribution<float> b(bias_shift, 0.1f);
  for (auto& v : m.w_enc) v = w(rng);
  for (auto& v : m.w_dec) v = w(rng);
  for (auto& v : m.b_enc) v = b(rng);
  for (auto& v : m.b_dec) v = b(rng) - bias_shift;
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("latent_forge_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixtures
