#include "latent_forge/synthetic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <tuple>

#include "latent_forge/binary_io.hpp"

namespace latent_forge {

void PlantedSpec::validate() const {
  if (d == 0 || m_true == 0 || k_true == 0) {
    throw ConfigError("planted spec: d, m_true and k_true must be positive");
  }
  if (k_true > m_true) throw ConfigError("planted spec: k_true must not exceed m_true");
  if (n_tracks == 0 || steps_per_track == 0) {
    throw ConfigError("planted spec: n_tracks and steps_per_track must be positive");
  }
  if (!(amplitude_low > 0.0f) || !(amplitude_low <= amplitude_high)) {
    throw ConfigError("planted spec: need 0 < amplitude_low <= amplitude_high");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("planted spec: noise_sigma must be >= 0");
  if (!prevalence.empty() && prevalence.size() != m_true) {
    throw ConfigError("planted spec: prevalence must list one value per atom");
  }
  for (double p : prevalence) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("planted spec: prevalence outside [0, 1]");
  }
  if (!(max_coherence > 0.0 && max_coherence <= 1.0)) {
    throw ConfigError("planted spec: max_coherence must be in (0, 1]");
  }
}

nlohmann::json to_json(const PlantedSpec& s) {
  return {{"d", s.d},
          {"m_true", s.m_true},
          {"k_true", s.k_true},
          {"n_tracks", s.n_tracks},
          {"steps_per_track", s.steps_per_track},
          {"amplitude_low", s.amplitude_low},
          {"amplitude_high", s.amplitude_high},
          {"noise_sigma", s.noise_sigma},
          {"prevalence", s.prevalence},
          {"max_coherence", s.max_coherence},
          {"max_retries", s.max_retries},
          {"seed", s.seed}};
}

PlantedSpec planted_spec_from_json(const nlohmann::json& j) {
  PlantedSpec s;
  try {
    s.d = j.value("d", s.d);
    s.m_true = j.value("m_true", s.m_true);
    s.k_true = j.value("k_true", s.k_true);
    s.n_tracks = j.value("n_tracks", s.n_tracks);
    s.steps_per_track = j.value("steps_per_track", s.steps_per_track);
    s.amplitude_low = j.value("amplitude_low", s.amplitude_low);
    s.amplitude_high = j.value("amplitude_high", s.amplitude_high);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.prevalence = j.value("prevalence", s.prevalence);
    s.max_coherence = j.value("max_coherence", s.max_coherence);
    s.max_retries = j.value("max_retries", s.max_retries);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("planted spec: ") + e.what());
  }
  return s;
}

namespace {

double row_cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    ab += static_cast<double>(a[c]) * b[c];
    aa += static_cast<double>(a[c]) * a[c];
    bb += static_cast<double>(b[c]) * b[c];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

Matrix draw_atoms(const PlantedSpec& spec, std::mt19937_64& rng) {
  Matrix atoms(spec.m_true, spec.d);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(spec.d);
  for (std::uint32_t i = 0; i < spec.m_true; ++i) {
    bool accepted = false;
    for (std::uint32_t attempt = 0; attempt < spec.max_retries && !accepted; ++attempt) {
      double n = 0.0;
      for (auto& x : v) {
        x = gauss(rng);
        n += x * x;
      }
      n = std::sqrt(n);
      if (n == 0.0) continue;
      auto row = atoms.row(i);
      for (std::size_t c = 0; c < spec.d; ++c) row[c] = static_cast<float>(v[c] / n);
      accepted = true;
      for (std::uint32_t p = 0; p < i && accepted; ++p) {
        accepted = std::abs(row_cosine(row, atoms.row(p))) <= spec.max_coherence;
      }
    }
    if (!accepted) {
      throw DataError("synthetic: cannot draw " + std::to_string(spec.m_true) +
                      " atoms with |cosine| <= " + std::to_string(spec.max_coherence) +
                      " in d=" + std::to_string(spec.d) + " after " +
                      std::to_string(spec.max_retries) + " retries (atom " +
                      std::to_string(i) + ")");
    }
  }
  return atoms;
}

}  // namespace

std::pair<ActivationCorpus, PlantedGroundTruth> generate_planted(const PlantedSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  PlantedGroundTruth truth;
  truth.atoms = draw_atoms(spec, rng);

  const std::uint32_t N = spec.n_tracks;
  truth.track_atoms.assign(N, {});
  std::vector<std::uint32_t> order(N);
  for (std::uint32_t i = 0; i < spec.m_true; ++i) {
    const double p = spec.prevalence.empty() ? 1.0 : spec.prevalence[i];
    const auto count = static_cast<std::uint32_t>(std::llround(p * N));
    std::iota(order.begin(), order.end(), 0u);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::uint32_t r = 0; r < count; ++r) truth.track_atoms[order[r]].push_back(i);
  }

  ActivationCorpus corpus;
  corpus.manifest.model_name = "synthetic";
  corpus.manifest.layer_index = 0;
  corpus.manifest.d = spec.d;
  corpus.manifest.track_count = N;
  corpus.manifest.source_notes = "planted dictionary, seed " + std::to_string(spec.seed);
  truth.row_codes.assign(N, {});

  const bool fixed_amp = spec.amplitude_low == spec.amplitude_high;
  std::uniform_real_distribution<float> amp(spec.amplitude_low, spec.amplitude_high);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> acc(spec.d);
  char id[32];

  for (std::uint32_t j = 0; j < N; ++j) {
    const auto& pool = truth.track_atoms[j];
    const std::size_t per_row = std::min<std::size_t>(spec.k_true, pool.size());
    const std::size_t cover_rows = per_row == 0 ? 0 : (pool.size() + per_row - 1) / per_row;
    if (cover_rows > spec.steps_per_track) {
      throw ConfigError("synthetic: track " + std::to_string(j) + " has " +
                        std::to_string(pool.size()) + " planted atoms but only " +
                        std::to_string(spec.steps_per_track) + " rows of " +
                        std::to_string(per_row) + " atoms to show them");
    }
    std::vector<std::uint32_t> cover(pool.begin(), pool.end());
    std::shuffle(cover.begin(), cover.end(), rng);
    std::vector<std::uint32_t> scratch(pool.begin(), pool.end());

    std::snprintf(id, sizeof(id), "track_%05u", j);
    TrackActivations track{id, Matrix(spec.steps_per_track, spec.d)};
    auto& codes = truth.row_codes[j];
    codes.resize(spec.steps_per_track);
    for (std::uint32_t t = 0; t < spec.steps_per_track; ++t) {
      RowCode& code = codes[t];
      if (t < cover_rows) {
        const std::size_t begin = t * per_row;
        const std::size_t end = std::min(begin + per_row, cover.size());
        code.atoms.assign(cover.begin() + begin, cover.begin() + end);
        // Top up the final covering row with other pool atoms.
        while (code.atoms.size() < per_row) {
          std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
          const auto a = pool[pick(rng)];
          if (std::find(code.atoms.begin(), code.atoms.end(), a) == code.atoms.end()) {
            code.atoms.push_back(a);
          }
        }
      } else {
        for (std::size_t s = 0; s < per_row; ++s) {
          std::uniform_int_distribution<std::size_t> pick(s, scratch.size() - 1);
          std::swap(scratch[s], scratch[pick(rng)]);
        }
        code.atoms.assign(scratch.begin(), scratch.begin() + per_row);
      }
      std::sort(code.atoms.begin(), code.atoms.end());
      std::fill(acc.begin(), acc.end(), 0.0);
      for (auto a : code.atoms) {
        const float coef = fixed_amp ? spec.amplitude_low : amp(rng);
        code.coefficients.push_back(coef);
        const auto atom = truth.atoms.row(a);
        for (std::size_t c = 0; c < spec.d; ++c) acc[c] += static_cast<double>(coef) * atom[c];
      }
      auto row = track.data.row(t);
      for (std::size_t c = 0; c < spec.d; ++c) {
        const double n = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise(rng) : 0.0;
        row[c] = static_cast<float>(acc[c] + n);
      }
    }
    corpus.tracks.push_back(std::move(track));
  }
  return {std::move(corpus), std::move(truth)};
}

RecoveryReport match_dictionary(const Matrix& learned, const Matrix& atoms,
                                double cos_threshold) {
  if (learned.cols != atoms.cols) {
    throw DimensionError("match_atoms: learned d=" + std::to_string(learned.cols) +
                         " vs planted d=" + std::to_string(atoms.cols));
  }
  struct Cand {
    double c;
    std::uint32_t atom, latent;
  };
  std::vector<Cand> cands;
  cands.reserve(learned.rows * atoms.rows);
  for (std::uint32_t a = 0; a < atoms.rows; ++a) {
    for (std::uint32_t l = 0; l < learned.rows; ++l) {
      cands.push_back({std::abs(row_cosine(learned.row(l), atoms.row(a))), a, l});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
    return std::tie(y.c, x.atom, x.latent) < std::tie(x.c, y.atom, y.latent);
  });
  std::vector<bool> atom_used(atoms.rows, false), latent_used(learned.rows, false);
  RecoveryReport report;
  for (const auto& c : cands) {
    if (atom_used[c.atom] || latent_used[c.latent]) continue;
    atom_used[c.atom] = latent_used[c.latent] = true;
    report.matches.push_back({c.atom, c.latent, c.c});
    if (c.c >= cos_threshold) ++report.matched;
  }
  std::sort(report.matches.begin(), report.matches.end(),
            [](const AtomMatch& x, const AtomMatch& y) { return x.atom < y.atom; });
  double sum = 0.0;
  for (const auto& m : report.matches) sum += m.abs_cosine;
  report.mean_matched_cosine =
      report.matches.empty() ? 0.0 : sum / static_cast<double>(report.matches.size());
  report.matched_fraction =
      atoms.rows == 0 ? 0.0 : static_cast<double>(report.matched) / static_cast<double>(atoms.rows);
  return report;
}

RecoveryReport match_atoms(const SaeModel& learned, const PlantedGroundTruth& truth,
                           double cos_threshold) {
  require_input_dim(learned, static_cast<std::uint32_t>(truth.atoms.cols));
  Matrix cols(learned.latent_dim(), learned.d());
  for (std::uint32_t j = 0; j < learned.latent_dim(); ++j) {
    const auto col = learned.decoder_column(j);
    std::copy(col.begin(), col.end(), cols.row(j).begin());
  }
  return match_dictionary(cols, truth.atoms, cos_threshold);
}

std::vector<ExpectedFeature> plant_prevalence_catalog(const PlantedSpec& spec,
                                                      const PlantedGroundTruth& truth,
                                                      const FilterPolicy& policy) {
  policy.validate();
  const std::size_t N = truth.row_codes.size();
  if (N == 0) throw DataError("plant_prevalence_catalog: no tracks");
  std::vector<ExpectedFeature> out(spec.m_true);
  for (std::uint32_t i = 0; i < spec.m_true; ++i) out[i].atom = i;
  char id[32];
  for (std::size_t j = 0; j < N; ++j) {
    std::vector<float> peak(spec.m_true, 0.0f);
    for (const auto& code : truth.row_codes[j]) {
      for (std::size_t a = 0; a < code.atoms.size(); ++a) {
        peak[code.atoms[a]] = std::max(peak[code.atoms[a]], code.coefficients[a]);
      }
    }
    std::snprintf(id, sizeof(id), "track_%05zu", j);
    for (std::uint32_t i = 0; i < spec.m_true; ++i) {
      if (static_cast<double>(peak[i]) > policy.tau) {
        ++out[i].active_tracks;
        out[i].tracks.emplace_back(id);
      }
    }
  }
  for (auto& f : out) {
    f.rate = static_cast<double>(f.active_tracks) / static_cast<double>(N);
    f.verdict = classify_rate(f.rate, policy);
  }
  return out;
}

SaeModel perfect_sae(const PlantedGroundTruth& truth, std::uint32_t k) {
  const auto m = static_cast<std::uint32_t>(truth.atoms.rows);
  const auto d = static_cast<std::uint32_t>(truth.atoms.cols);
  SaeConfig cfg;
  cfg.d = d;
  cfg.epsilon = (m + d - 1) / d;
  cfg.k = k;
  SaeModel model = SaeModel::zeros(cfg);
  const std::size_t L = cfg.latent_dim();

  Eigen::MatrixXd A(m, d);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t c = 0; c < d; ++c) A(i, c) = truth.atoms(i, c);
  }
  // Dual basis: rows of (A A^T)^-1 A satisfy dual_i . atom_j = [i == j].
  const Eigen::MatrixXd gram = A * A.transpose();
  const Eigen::MatrixXd dual = gram.ldlt().solve(A);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t c = 0; c < d; ++c) {
      model.w_enc[static_cast<std::size_t>(i) * d + c] = static_cast<float>(dual(i, c));
      model.w_dec[static_cast<std::size_t>(c) * L + i] = truth.atoms(i, c);
    }
  }
  return model;
}

namespace {
constexpr char kPlantMagic[4] = {'P', 'L', 'N', 'T'};
}

void write_ground_truth(const PlantedGroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("ground truth: cannot open " + path.string());
  out.write(kPlantMagic, 4);
  binio::write_le<std::uint32_t>(out, 1);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(truth.atoms.cols));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(truth.atoms.rows));
  binio::write_floats(out, truth.atoms.data);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(truth.track_atoms.size()));
  for (std::size_t j = 0; j < truth.track_atoms.size(); ++j) {
    const auto& pool = truth.track_atoms[j];
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pool.size()));
    for (auto a : pool) binio::write_le<std::uint32_t>(out, a);
    const auto& codes = truth.row_codes[j];
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(codes.size()));
    for (const auto& code : codes) {
      binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(code.atoms.size()));
      for (std::size_t a = 0; a < code.atoms.size(); ++a) {
        binio::write_le<std::uint32_t>(out, code.atoms[a]);
        binio::write_le<float>(out, code.coefficients[a]);
      }
    }
  }
  if (!out) throw DataError("ground truth: write failure on " + path.string());
}

PlantedGroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ground truth: cannot open " + path.string());
  auto fail = [] [[noreturn]] () { throw FormatError("ground truth: truncated file"); };
  char magic[4];
  if (!binio::read_bytes(in, magic, 4)) fail();
  if (std::memcmp(magic, kPlantMagic, 4) != 0) throw FormatError("ground truth: bad magic");
  std::uint32_t version = 0, d = 0, m = 0, n = 0;
  if (!binio::read_le(in, version) || !binio::read_le(in, d) || !binio::read_le(in, m)) fail();
  if (version != 1) throw FormatError("ground truth: unsupported version");
  PlantedGroundTruth truth;
  truth.atoms = Matrix(m, d);
  if (!binio::read_floats(in, truth.atoms.data) || !binio::read_le(in, n)) fail();
  truth.track_atoms.resize(n);
  truth.row_codes.resize(n);
  for (std::uint32_t j = 0; j < n; ++j) {
    std::uint32_t pool = 0, steps = 0;
    if (!binio::read_le(in, pool)) fail();
    truth.track_atoms[j].resize(pool);
    for (auto& a : truth.track_atoms[j]) {
      if (!binio::read_le(in, a)) fail();
    }
    if (!binio::read_le(in, steps)) fail();
    truth.row_codes[j].resize(steps);
    for (auto& code : truth.row_codes[j]) {
      std::uint32_t count = 0;
      if (!binio::read_le(in, count)) fail();
      code.atoms.resize(count);
      code.coefficients.resize(count);
      for (std::uint32_t a = 0; a < count; ++a) {
        if (!binio::read_le(in, code.atoms[a]) || !binio::read_le(in, code.coefficients[a])) {
          fail();
        }
      }
    }
  }
  return truth;
}

}  // namespace latent_forge
