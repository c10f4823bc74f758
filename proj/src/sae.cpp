#include "latent_forge/sae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "latent_forge/adam.hpp"
#include "latent_forge/binary_io.hpp"
#include "latent_forge/digest.hpp"
#include "latent_forge/parallel.hpp"

namespace latent_forge {

void SaeConfig::validate() const {
  if (d == 0) throw ConfigError("sae config: d must be positive");
  if (epsilon == 0) throw ConfigError("sae config: epsilon must be positive");
  if (k == 0) throw ConfigError("sae config: k must be positive");
  if (static_cast<std::uint64_t>(epsilon) * d > UINT32_MAX) {
    throw ConfigError("sae config: latent_dim overflows");
  }
  if (k > latent_dim()) {
    throw ConfigError("sae config: k=" + std::to_string(k) +
                      " exceeds latent_dim=" + std::to_string(latent_dim()));
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("sae config: learning_rate must be positive");
  }
  if (batch_size == 0) throw ConfigError("sae config: batch_size must be positive");
  if (epochs == 0 && max_steps == 0) {
    throw ConfigError("sae config: epochs or max_steps must be positive");
  }
  if (dead_feature_window == 0) {
    throw ConfigError("sae config: dead_feature_window must be positive");
  }
  if (!(divergence_ratio > 1.0)) {
    throw ConfigError("sae config: divergence_ratio must exceed 1");
  }
}

nlohmann::json to_json(const SaeConfig& c) {
  return {{"d", c.d},
          {"epsilon", c.epsilon},
          {"k", c.k},
          {"latent_dim", c.latent_dim()},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"dead_feature_window", c.dead_feature_window},
          {"divergence_ratio", c.divergence_ratio}};
}

SaeConfig sae_config_from_json(const nlohmann::json& j) {
  SaeConfig c;
  try {
    c.d = j.at("d").get<std::uint32_t>();
    c.epsilon = j.at("epsilon").get<std::uint32_t>();
    c.k = j.at("k").get<std::uint32_t>();
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.dead_feature_window = j.value("dead_feature_window", c.dead_feature_window);
    c.divergence_ratio = j.value("divergence_ratio", c.divergence_ratio);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sae config: ") + e.what());
  }
  return c;
}

SaeModel SaeModel::zeros(const SaeConfig& config) {
  config.validate();
  SaeModel m;
  m.config = config;
  const std::size_t L = config.latent_dim();
  const std::size_t d = config.d;
  m.w_enc.assign(L * d, 0.0f);
  m.b_enc.assign(L, 0.0f);
  m.w_dec.assign(d * L, 0.0f);
  m.b_dec.assign(d, 0.0f);
  return m;
}

std::vector<float> SaeModel::decoder_column(std::uint32_t j) const {
  const std::size_t L = latent_dim();
  std::vector<float> col(d());
  for (std::size_t c = 0; c < col.size(); ++c) col[c] = w_dec[c * L + j];
  return col;
}

double SaeModel::decoder_column_norm(std::uint32_t j) const {
  const std::size_t L = latent_dim();
  double s = 0.0;
  for (std::size_t c = 0; c < d(); ++c) {
    const double v = w_dec[c * L + j];
    s += v * v;
  }
  return std::sqrt(s);
}

bool bit_identical(const SaeModel& a, const SaeModel& b) {
  return a.config == b.config && bit_equal(a.w_enc, b.w_enc) &&
         bit_equal(a.b_enc, b.b_enc) && bit_equal(a.w_dec, b.w_dec) &&
         bit_equal(a.b_dec, b.b_dec);
}

void require_input_dim(const SaeModel& model, std::uint32_t d) {
  if (model.d() != d) {
    throw DimensionError("dimension mismatch: SAE expects d=" +
                         std::to_string(model.d()) + ", input has d=" +
                         std::to_string(d));
  }
}

namespace {

// Strict total order: larger value first, then lower index.
struct TopKOrder {
  const float* h;
  bool operator()(std::uint32_t a, std::uint32_t b) const {
    return h[a] > h[b] || (h[a] == h[b] && a < b);
  }
};

void select_top_k(std::span<const float> h, std::uint32_t k,
                  std::vector<std::uint32_t>& scratch,
                  std::vector<std::uint32_t>& out) {
  scratch.resize(h.size());
  std::iota(scratch.begin(), scratch.end(), 0u);
  TopKOrder order{h.data()};
  if (k < h.size()) {
    std::nth_element(scratch.begin(), scratch.begin() + k, scratch.end(), order);
  }
  out.assign(scratch.begin(), scratch.begin() + k);
  std::sort(out.begin(), out.end());
}

void check_k(std::size_t len, std::uint32_t k) {
  if (k == 0 || k > len) {
    throw ConfigError("top_k_project: k=" + std::to_string(k) +
                      " must be in [1, " + std::to_string(len) + "]");
  }
}

// Per-row forward state. Pre-activations are accumulated in double; the
// active set is chosen on the float-rounded ReLU output so it agrees with
// top_k_project(encode(x).dense).
struct RowForward {
  std::vector<double> pre;
  std::vector<float> dense;
  std::vector<std::uint32_t> scratch;
  std::vector<std::uint32_t> selected;
  std::vector<std::uint32_t> active;
  std::vector<double> z;  // values on `active`
  std::vector<double> recon;

  void run(const SaeModel& m, const float* x) {
    const std::size_t d = m.d();
    const std::size_t L = m.latent_dim();
    pre.resize(L);
    dense.resize(L);
    for (std::size_t j = 0; j < L; ++j) {
      const float* w = m.w_enc.data() + j * d;
      double acc = m.b_enc[j];
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(w[c]) * x[c];
      pre[j] = acc;
      dense[j] = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
    }
    select_top_k(dense, m.k(), scratch, selected);
    active.clear();
    z.clear();
    for (auto j : selected) {
      if (dense[j] > 0.0f) {
        active.push_back(j);
        z.push_back(pre[j]);
      }
    }
    recon.assign(m.b_dec.begin(), m.b_dec.end());
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t j = active[a];
      const double zj = z[a];
      for (std::size_t c = 0; c < d; ++c) recon[c] += m.w_dec[c * L + j] * zj;
    }
  }

  double squared_error(const float* x) const {
    double s = 0.0;
    for (std::size_t c = 0; c < recon.size(); ++c) {
      const double e = recon[c] - x[c];
      s += e * e;
    }
    return s;
  }
};

// Backward payload for one row, reduced serially in row order.
struct RowGrad {
  double loss = 0.0;
  std::vector<std::uint32_t> active;
  std::vector<double> z;
  std::vector<double> dpre;
  std::vector<double> err;  // (x_hat - x)
};

void check_batch(const SaeModel& m, std::span<const float> batch, std::size_t rows) {
  if (rows == 0) throw DataError("reconstruction loss: empty batch");
  if (batch.size() != rows * m.d()) {
    throw DimensionError("dimension mismatch: batch of " + std::to_string(rows) +
                         " rows has " + std::to_string(batch.size()) +
                         " values, expected d=" + std::to_string(m.d()));
  }
}

}  // namespace

std::vector<std::uint32_t> top_k_indices(std::span<const float> h, std::uint32_t k) {
  check_k(h.size(), k);
  std::vector<std::uint32_t> scratch, out;
  select_top_k(h, k, scratch, out);
  return out;
}

std::vector<float> top_k_project(std::span<const float> h, std::uint32_t k) {
  std::vector<float> out(h.size(), 0.0f);
  for (auto j : top_k_indices(h, k)) out[j] = h[j];
  return out;
}

LatentCode encode(const SaeModel& model, std::span<const float> x) {
  if (x.size() != model.d()) {
    throw DimensionError("encode: dimension mismatch: expected " +
                         std::to_string(model.d()) + ", got " +
                         std::to_string(x.size()));
  }
  RowForward f;
  f.run(model, x.data());
  LatentCode code;
  code.dense = std::move(f.dense);
  code.sparse.assign(code.dense.size(), 0.0f);
  for (auto j : f.active) code.sparse[j] = code.dense[j];
  code.active = std::move(f.active);
  return code;
}

std::vector<float> decode(const SaeModel& model, std::span<const float> z) {
  if (z.size() != model.latent_dim()) {
    throw DimensionError("decode: dimension mismatch: expected " +
                         std::to_string(model.latent_dim()) + ", got " +
                         std::to_string(z.size()));
  }
  const std::size_t d = model.d();
  const std::size_t L = model.latent_dim();
  std::vector<double> acc(model.b_dec.begin(), model.b_dec.end());
  for (std::size_t j = 0; j < L; ++j) {
    if (z[j] == 0.0f) continue;
    for (std::size_t c = 0; c < d; ++c) {
      acc[c] += static_cast<double>(model.w_dec[c * L + j]) * z[j];
    }
  }
  return {acc.begin(), acc.end()};
}

LossValue reconstruction_loss(const SaeModel& model, std::span<const float> batch,
                              std::size_t rows, unsigned threads) {
  check_batch(model, batch, rows);
  std::vector<double> per_row(rows);
  const std::size_t d = model.d();
  parallel_for(rows, threads, [&](std::size_t r) {
    thread_local RowForward f;
    f.run(model, batch.data() + r * d);
    per_row[r] = f.squared_error(batch.data() + r * d);
  });
  double sum = 0.0;
  for (double v : per_row) sum += v;
  LossValue out;
  out.per_row_sum = sum / static_cast<double>(rows);
  out.per_dim = out.per_row_sum / static_cast<double>(d);
  return out;
}

SaeGradients::SaeGradients(const SaeModel& m)
    : w_enc(m.w_enc.size()), b_enc(m.b_enc.size()), w_dec(m.w_dec.size()),
      b_dec(m.b_dec.size()) {}

void SaeGradients::zero() {
  std::fill(w_enc.begin(), w_enc.end(), 0.0);
  std::fill(b_enc.begin(), b_enc.end(), 0.0);
  std::fill(w_dec.begin(), w_dec.end(), 0.0);
  std::fill(b_dec.begin(), b_dec.end(), 0.0);
}

double loss_and_gradients(const SaeModel& model, std::span<const float> batch,
                          std::size_t rows, SaeGradients& grads, unsigned threads,
                          std::vector<std::uint32_t>* active_out) {
  check_batch(model, batch, rows);
  const std::size_t d = model.d();
  const std::size_t L = model.latent_dim();
  const double scale = 2.0 / static_cast<double>(rows);

  std::vector<RowGrad> work(rows);
  parallel_for(rows, threads, [&](std::size_t r) {
    thread_local RowForward f;
    const float* x = batch.data() + r * d;
    f.run(model, x);
    RowGrad& g = work[r];
    g.active = f.active;
    g.z = f.z;
    g.err.resize(d);
    double loss = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      g.err[c] = f.recon[c] - x[c];
      loss += g.err[c] * g.err[c];
    }
    g.loss = loss;
    g.dpre.resize(g.active.size());
    for (std::size_t a = 0; a < g.active.size(); ++a) {
      const std::size_t j = g.active[a];
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += model.w_dec[c * L + j] * g.err[c];
      g.dpre[a] = scale * s;
    }
  });

  grads.zero();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const RowGrad& g = work[r];
    const float* x = batch.data() + r * d;
    loss += g.loss;
    for (std::size_t c = 0; c < d; ++c) grads.b_dec[c] += scale * g.err[c];
    for (std::size_t a = 0; a < g.active.size(); ++a) {
      const std::size_t j = g.active[a];
      const double zj = scale * g.z[a];
      for (std::size_t c = 0; c < d; ++c) grads.w_dec[c * L + j] += g.err[c] * zj;
      const double dp = g.dpre[a];
      grads.b_enc[j] += dp;
      double* row = grads.w_enc.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += dp * x[c];
      if (active_out != nullptr) active_out->push_back(static_cast<std::uint32_t>(j));
    }
  }
  return loss / static_cast<double>(rows);
}

SaeModel initialize_model(const SaeConfig& config) {
  SaeModel m = SaeModel::zeros(config);
  const std::size_t d = config.d;
  const std::size_t L = config.latent_dim();
  std::mt19937_64 rng(config.seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(d));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& w : m.w_enc) w = dist(rng);
  for (std::size_t j = 0; j < L; ++j) {
    const float* row = m.w_enc.data() + j * d;
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) norm += static_cast<double>(row[c]) * row[c];
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < d; ++c) {
      m.w_dec[c * L + j] = norm > 0.0 ? static_cast<float>(row[c] / norm) : 0.0f;
    }
  }
  return m;
}

nlohmann::json to_json(const TrainingReport& r) {
  return {{"epoch_loss", r.epoch_loss},
          {"final_loss", r.final_loss},
          {"final_loss_per_dim", r.final_loss_per_dim},
          {"steps", r.steps},
          {"rows_seen", r.rows_seen},
          {"dead_features", r.dead_features},
          {"wall_seconds", r.wall_seconds},
          {"input_mean", r.input_mean},
          {"input_variance", r.input_variance}};
}

namespace {

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

TrainResult train(const SaeConfig& config, RowSource& rows, unsigned threads,
                  const TrainProgress& progress) {
  config.validate();
  if (rows.dim() != config.d) {
    throw DimensionError("train: corpus has d=" + std::to_string(rows.dim()) +
                         " but config.d=" + std::to_string(config.d));
  }
  const auto started = std::chrono::steady_clock::now();
  const std::size_t d = config.d;
  const std::size_t L = config.latent_dim();

  TrainResult result{initialize_model(config), {}};
  SaeModel& model = result.model;
  TrainingReport& report = result.report;
  SaeGradients grads(model);
  Adam<float> opt_we(model.w_enc.size()), opt_be(model.b_enc.size()),
      opt_wd(model.w_dec.size()), opt_bd(model.b_dec.size());

  std::vector<std::int64_t> last_active(L, -1);
  std::vector<std::uint32_t> active;
  std::vector<double> sum(d, 0.0), sum_sq(d, 0.0);
  std::vector<float> batch;
  double reference = -1.0;
  std::uint64_t step = 0;
  bool stop = false;
  const std::uint32_t epochs = config.epochs == 0 ? UINT32_MAX : config.epochs;

  for (std::uint32_t epoch = 0; epoch < epochs && !stop; ++epoch) {
    rows.rewind();
    double epoch_sum = 0.0;
    std::uint64_t epoch_rows = 0;
    while (true) {
      if (config.max_steps > 0 && step >= config.max_steps) {
        stop = true;
        break;
      }
      batch.clear();
      const std::size_t n = rows.next_batch(config.batch_size, batch);
      if (n == 0) break;
      if (epoch == 0) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            const double v = batch[r * d + c];
            sum[c] += v;
            sum_sq[c] += v * v;
          }
        }
      }
      if (reference < 0.0) {
        double s = 0.0;
        for (float v : batch) s += static_cast<double>(v) * v;
        reference = std::max(s / static_cast<double>(n), 1e-12);
      }
      active.clear();
      const double loss = loss_and_gradients(model, batch, n, grads, threads, &active);
      if (!std::isfinite(loss) || loss > config.divergence_ratio * reference) {
        throw DivergenceError("train: diverged at step " + std::to_string(step) +
                                  ": batch loss " + std::to_string(loss) +
                                  " (reference " + std::to_string(reference) + ")",
                              step);
      }
      ++step;
      opt_we.step(std::span<float>(model.w_enc), grads.w_enc, config.learning_rate, step);
      opt_be.step(std::span<float>(model.b_enc), grads.b_enc, config.learning_rate, step);
      opt_wd.step(std::span<float>(model.w_dec), grads.w_dec, config.learning_rate, step);
      opt_bd.step(std::span<float>(model.b_dec), grads.b_dec, config.learning_rate, step);
      if (!all_finite(model.w_enc) || !all_finite(model.w_dec) ||
          !all_finite(model.b_enc) || !all_finite(model.b_dec)) {
        throw DivergenceError("train: non-finite parameters after step " +
                                  std::to_string(step - 1),
                              step - 1);
      }
      for (auto j : active) last_active[j] = static_cast<std::int64_t>(step);
      epoch_sum += loss * static_cast<double>(n);
      epoch_rows += n;
    }
    if (epoch == 0) report.rows_seen = epoch_rows;
    if (epoch_rows == 0) {
      if (epoch == 0) throw DataError("train: corpus is empty");
      break;
    }
    const double epoch_loss = epoch_sum / static_cast<double>(epoch_rows);
    report.epoch_loss.push_back(epoch_loss);
    if (progress) progress(epoch, epoch_loss);
  }

  report.steps = step;
  const double n_rows = static_cast<double>(std::max<std::uint64_t>(report.rows_seen, 1));
  report.input_mean.resize(d);
  report.input_variance.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    const double mean = sum[c] / n_rows;
    report.input_mean[c] = mean;
    report.input_variance[c] = std::max(0.0, sum_sq[c] / n_rows - mean * mean);
  }
  const std::int64_t cutoff =
      static_cast<std::int64_t>(step) - static_cast<std::int64_t>(config.dead_feature_window);
  report.dead_features = static_cast<std::uint32_t>(std::count_if(
      last_active.begin(), last_active.end(),
      [&](std::int64_t s) { return s <= cutoff || s < 0; }));

  // Post-training evaluation pass.
  rows.rewind();
  double total = 0.0;
  std::uint64_t total_rows = 0;
  while (true) {
    batch.clear();
    const std::size_t n = rows.next_batch(4096, batch);
    if (n == 0) break;
    total += reconstruction_loss(model, batch, n, threads).per_row_sum * static_cast<double>(n);
    total_rows += n;
  }
  report.final_loss = total / static_cast<double>(std::max<std::uint64_t>(total_rows, 1));
  report.final_loss_per_dim = report.final_loss / static_cast<double>(d);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// --- checkpoints ---

std::string save_checkpoint(const SaeModel& model) {
  model.config.validate();
  const std::size_t L = model.latent_dim();
  const std::size_t d = model.d();
  if (model.w_enc.size() != L * d || model.b_enc.size() != L ||
      model.w_dec.size() != d * L || model.b_dec.size() != d) {
    throw DimensionError("checkpoint: parameter shapes do not match config");
  }
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, 4);
  binio::write_le<std::uint32_t>(out, kCheckpointVersion);
  binio::write_le<std::uint32_t>(out, model.config.d);
  binio::write_le<std::uint32_t>(out, model.latent_dim());
  binio::write_le<std::uint32_t>(out, model.config.k);
  binio::write_le<std::uint32_t>(out, model.config.epsilon);
  binio::write_floats(out, model.w_enc);
  binio::write_floats(out, model.b_enc);
  binio::write_floats(out, model.w_dec);
  binio::write_floats(out, model.b_dec);
  const std::string cfg = to_json(model.config).dump();
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  return std::move(out).str();
}

SaeModel load_checkpoint(std::string_view bytes) {
  std::istringstream in{std::string(bytes), std::ios::binary};
  char magic[4];
  if (!binio::read_bytes(in, magic, 4)) throw FormatError("checkpoint: truncated header");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  std::uint32_t version = 0, d = 0, latent = 0, k = 0, eps = 0;
  if (!binio::read_le(in, version)) throw FormatError("checkpoint: truncated header");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  if (!binio::read_le(in, d) || !binio::read_le(in, latent) || !binio::read_le(in, k) ||
      !binio::read_le(in, eps)) {
    throw FormatError("checkpoint: truncated header");
  }
  if (d == 0 || eps == 0 || static_cast<std::uint64_t>(eps) * d != latent || k == 0 ||
      k > latent) {
    throw FormatError("checkpoint: inconsistent dimension header");
  }
  SaeConfig header_cfg;
  header_cfg.d = d;
  header_cfg.epsilon = eps;
  header_cfg.k = k;
  SaeModel m = SaeModel::zeros(header_cfg);
  if (!binio::read_floats(in, m.w_enc) || !binio::read_floats(in, m.b_enc) ||
      !binio::read_floats(in, m.w_dec) || !binio::read_floats(in, m.b_dec)) {
    throw FormatError("checkpoint: truncated weights");
  }
  std::uint32_t cfg_len = 0;
  if (!binio::read_le(in, cfg_len)) throw FormatError("checkpoint: truncated config");
  std::string cfg(cfg_len, '\0');
  if (!binio::read_bytes(in, cfg.data(), cfg_len)) {
    throw FormatError("checkpoint: truncated config");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config JSON: ") + e.what());
  }
  m.config = sae_config_from_json(j);
  if (m.config.d != d || m.config.epsilon != eps || m.config.k != k) {
    throw FormatError("checkpoint: config echo disagrees with dimension header");
  }
  for (const auto* v : {&m.w_enc, &m.b_enc, &m.w_dec, &m.b_dec}) {
    if (!all_finite(*v)) throw FormatError("checkpoint: non-finite weights");
  }
  return m;
}

void save_checkpoint_file(const SaeModel& model, const std::filesystem::path& path) {
  const std::string bytes = save_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
}

SaeModel load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_checkpoint(buf.str());
}

std::string checkpoint_digest(const SaeModel& model) {
  return sha256_hex(save_checkpoint(model));
}

}  // namespace latent_forge
