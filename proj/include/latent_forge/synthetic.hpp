#pragma once

// Synthetic corpora with a planted sparse dictionary. Used as the
// independent oracle for dictionary recovery and filter verdicts.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/sae.hpp"

namespace latent_forge {

struct PlantedSpec {
  std::uint32_t d = 64;
  std::uint32_t m_true = 32;
  std::uint32_t k_true = 4;
  std::uint32_t n_tracks = 100;
  std::uint32_t steps_per_track = 100;
  float amplitude_low = 0.5f;
  float amplitude_high = 1.5f;
  double noise_sigma = 0.0;
  // Fraction of tracks each atom is planted in; empty means every atom in
  // every track. Atom i lands in exactly round(prevalence[i] * n_tracks)
  // tracks.
  std::vector<double> prevalence;
  double max_coherence = 0.3;
  std::uint32_t max_retries = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  double noise_floor() const { return noise_sigma * noise_sigma * d; }
  bool operator==(const PlantedSpec&) const = default;
};

nlohmann::json to_json(const PlantedSpec& s);
PlantedSpec planted_spec_from_json(const nlohmann::json& j);

struct RowCode {
  std::vector<std::uint32_t> atoms;
  std::vector<float> coefficients;
  bool operator==(const RowCode&) const = default;
};

struct PlantedGroundTruth {
  Matrix atoms;  // m_true x d, unit-norm rows
  std::vector<std::vector<std::uint32_t>> track_atoms;  // planted pool per track
  std::vector<std::vector<RowCode>> row_codes;          // [track][step]

  bool operator==(const PlantedGroundTruth&) const = default;
};

// Throws DataError when m_true atoms with pairwise |cosine| <= max_coherence
// cannot be drawn within max_retries attempts per atom.
std::pair<ActivationCorpus, PlantedGroundTruth> generate_planted(const PlantedSpec& spec);

struct AtomMatch {
  std::uint32_t atom = 0;
  std::uint32_t latent = 0;
  double abs_cosine = 0.0;
};

struct RecoveryReport {
  double matched_fraction = 0.0;  // atoms matched at |cos| >= threshold / m_true
  double mean_matched_cosine = 0.0;
  std::uint32_t matched = 0;
  std::vector<AtomMatch> matches;  // greedy assignment, one per atom when possible
};

// Greedy maximum-|cosine| bipartite matching between learned dictionary
// elements (rows of `learned`) and planted atoms.
RecoveryReport match_dictionary(const Matrix& learned, const Matrix& atoms,
                                double cos_threshold);
RecoveryReport match_atoms(const SaeModel& learned, const PlantedGroundTruth& truth,
                           double cos_threshold);

struct ExpectedFeature {
  std::uint32_t atom = 0;
  std::uint64_t active_tracks = 0;
  double rate = 0.0;
  Verdict verdict = Verdict::inactive;
  std::vector<std::string> tracks;  // ascending track index order
};

// Verdicts a perfect SAE (one latent per atom) would produce on the planted
// corpus.
std::vector<ExpectedFeature> plant_prevalence_catalog(const PlantedSpec& spec,
                                                      const PlantedGroundTruth& truth,
                                                      const FilterPolicy& policy);

// SAE whose first m_true latents decode to the planted atoms and encode with
// the dual basis (exact coefficients on noise-free rows). epsilon is the
// smallest value with epsilon * d >= m_true.
SaeModel perfect_sae(const PlantedGroundTruth& truth, std::uint32_t k);

// Sidecar layout: magic "PLNT", u32 version, u32 d, u32 m_true, atoms
// (m_true*d f32 row-major), u32 n_tracks, then per track: u32 pool size,
// pool ids (u32), u32 T, per row: u32 count, count * (u32 atom, f32 coef).
void write_ground_truth(const PlantedGroundTruth& truth, const std::filesystem::path& path);
PlantedGroundTruth read_ground_truth(const std::filesystem::path& path);

}  // namespace latent_forge
