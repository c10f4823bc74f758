#pragma once

// k-sparse autoencoder: h = ReLU(W_e x + b_e), z = P_k(h), x_hat = W_d z + b_d.
//
// Checkpoint format v1 (little-endian): magic "SAEW", u32 version, u32 d,
// u32 latent_dim, u32 k, u32 epsilon, W_e (latent_dim*d f32 row-major), b_e,
// W_d (d*latent_dim f32 row-major), b_d, then u32 length + config JSON.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/common.hpp"

namespace latent_forge {

struct SaeConfig {
  std::uint32_t d = 0;
  std::uint32_t epsilon = 1;
  std::uint32_t k = 1;
  double learning_rate = 1e-3;
  std::uint32_t batch_size = 256;
  std::uint32_t epochs = 1;
  std::uint64_t max_steps = 0;  // 0: run all epochs
  std::uint64_t seed = 0;
  std::uint64_t dead_feature_window = 1000;
  // Abort when a batch loss exceeds this multiple of the first batch's mean
  // squared row norm (or is non-finite).
  double divergence_ratio = 1e4;

  std::uint32_t latent_dim() const { return epsilon * d; }
  void validate() const;

  bool operator==(const SaeConfig&) const = default;
};

nlohmann::json to_json(const SaeConfig& c);
SaeConfig sae_config_from_json(const nlohmann::json& j);

struct SaeModel {
  SaeConfig config;
  std::vector<float> w_enc;  // latent_dim x d
  std::vector<float> b_enc;  // latent_dim
  std::vector<float> w_dec;  // d x latent_dim
  std::vector<float> b_dec;  // d

  std::uint32_t d() const { return config.d; }
  std::uint32_t latent_dim() const { return config.latent_dim(); }
  std::uint32_t k() const { return config.k; }

  // Zero-initialized parameters of the right shapes.
  static SaeModel zeros(const SaeConfig& config);

  std::vector<float> decoder_column(std::uint32_t j) const;
  double decoder_column_norm(std::uint32_t j) const;
};

bool bit_identical(const SaeModel& a, const SaeModel& b);

// Throws DimensionError if the model cannot consume d-dimensional inputs.
void require_input_dim(const SaeModel& model, std::uint32_t d);

struct LatentCode {
  std::vector<float> dense;
  std::vector<float> sparse;
  std::vector<std::uint32_t> active;  // ascending; nonzero entries of sparse
};

// Indices of the k largest entries (ties: lowest index first), ascending.
std::vector<std::uint32_t> top_k_indices(std::span<const float> h, std::uint32_t k);
std::vector<float> top_k_project(std::span<const float> h, std::uint32_t k);

LatentCode encode(const SaeModel& model, std::span<const float> x);
std::vector<float> decode(const SaeModel& model, std::span<const float> z);

struct LossValue {
  double per_row_sum = 0.0;  // mean over rows of squared L2 error
  double per_dim = 0.0;      // per_row_sum / d
};

// batch: rows x d, row-major.
LossValue reconstruction_loss(const SaeModel& model, std::span<const float> batch,
                              std::size_t rows, unsigned threads = 1);

struct SaeGradients {
  std::vector<double> w_enc, b_enc, w_dec, b_dec;

  explicit SaeGradients(const SaeModel& model);
  void zero();
};

// Mean per-row loss of the batch and its gradient, with the top-k active set
// of each row held fixed (straight-through mask). Gradients are overwritten.
double loss_and_gradients(const SaeModel& model, std::span<const float> batch,
                          std::size_t rows, SaeGradients& grads,
                          unsigned threads = 1,
                          std::vector<std::uint32_t>* active_out = nullptr);

SaeModel initialize_model(const SaeConfig& config);

struct TrainingReport {
  std::vector<double> epoch_loss;  // mean per-row loss during each epoch
  double final_loss = 0.0;         // post-training pass over the corpus
  double final_loss_per_dim = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t rows_seen = 0;
  std::uint32_t dead_features = 0;
  double wall_seconds = 0.0;
  std::vector<double> input_mean;
  std::vector<double> input_variance;
};

nlohmann::json to_json(const TrainingReport& r);

struct TrainResult {
  SaeModel model;
  TrainingReport report;
};

using TrainProgress = std::function<void(std::uint32_t epoch, double epoch_loss)>;

// Deterministic for a given config and row order, for any thread count.
TrainResult train(const SaeConfig& config, RowSource& rows, unsigned threads = 1,
                  const TrainProgress& progress = {});

inline constexpr char kCheckpointMagic[4] = {'S', 'A', 'E', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string save_checkpoint(const SaeModel& model);
SaeModel load_checkpoint(std::string_view bytes);
void save_checkpoint_file(const SaeModel& model, const std::filesystem::path& path);
SaeModel load_checkpoint_file(const std::filesystem::path& path);
std::string checkpoint_digest(const SaeModel& model);

}  // namespace latent_forge
