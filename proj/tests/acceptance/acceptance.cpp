// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria (0 when everything passes).
//
//   acceptance [--only NAME] [--list]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/analysis.hpp"
#include "latent_forge/cli.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/sae.hpp"
#include "latent_forge/steering.hpp"
#include "latent_forge/synthetic.hpp"

#include "../oracles/fixtures.hpp"
#include "../oracles/oracles.hpp"

using namespace latent_forge;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, fixed here so they cannot drift per run.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradDenomFloor = 1e-6;
constexpr double kRecoveryCosine = 0.9;
constexpr double kRecoveryFraction = 0.80;
constexpr double kLossOverFloor = 2.0;
constexpr double kMuTol = 1e-6;
constexpr double kNormRelTol = 1e-6;
constexpr double kProbeSeparable = 0.80;
constexpr double kProbeSigmas = 3.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// --- top-k ---

Outcome topk_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::uint32_t> len(1, 512);
  std::uniform_int_distribution<int> coarse(-2, 6);
  std::normal_distribution<float> fine(0.0f, 1.0f);
  int mismatches = 0, with_ties = 0;
  for (int v = 0; v < 1000; ++v) {
    const std::uint32_t L = len(rng);
    std::uniform_int_distribution<std::uint32_t> kd(1, L);
    const std::uint32_t k = kd(rng);
    std::vector<float> h(L);
    // Every other vector is drawn from a coarse grid so ties are common.
    const bool tied = v % 2 == 0;
    for (auto& x : h) x = tied ? std::max(0, coarse(rng)) * 0.25f : std::max(0.0f, fine(rng));
    with_ties += tied;
    const auto got = top_k_project(h, k);
    const auto want = oracle::top_k(h, k);
    if (!bit_equal(got, want)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(1000 - mismatches) + "/1000 exact, " +
                               std::to_string(with_ties) + " tie-heavy"};
}

// --- gradient check ---

Outcome gradient_check() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    SaeModel m = fixtures::random_model(rng, 8, 2, 4, 0.05f);
    const std::size_t rows = 12;
    std::vector<float> batch(rows * 8);
    std::normal_distribution<float> val(0.0f, 1.0f);
    for (auto& x : batch) x = val(rng);

    SaeGradients g(m);
    loss_and_gradients(m, batch, rows, g);
    const auto masks = oracle::active_sets(m, batch, rows);

    auto check = [&](std::vector<float>& param, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const float saved = param[i];
        const float h = 1e-2f * std::max(1.0f, std::abs(saved));
        param[i] = saved + h;
        auto pp = oracle::to_double(m);
        const double up = oracle::masked_loss(pp, 8, 16, batch, rows, masks);
        const double hi = param[i];
        param[i] = saved - h;
        pp = oracle::to_double(m);
        const double down = oracle::masked_loss(pp, 8, 16, batch, rows, masks);
        const double lo = param[i];
        param[i] = saved;
        const double numeric = (up - down) / (hi - lo);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), kGradDenomFloor});
        worst = std::max(worst, rel);
        ++checked;
      }
    };
    check(m.w_enc, g.w_enc);
    check(m.b_enc, g.b_enc);
    check(m.w_dec, g.w_dec);
    check(m.b_dec, g.b_dec);
  }
  return {worst <= kGradRelTol,
          std::to_string(checked) + " partials, worst rel err " + fmt("%.2e", worst)};
}

// --- dictionary recovery ---

Outcome dictionary_recovery() {
  PlantedSpec spec;
  spec.d = 64;
  spec.m_true = 32;
  spec.k_true = 4;
  spec.n_tracks = 500;
  spec.steps_per_track = 100;  // 50,000 rows
  spec.noise_sigma = 0.01;
  spec.seed = 303;
  const auto [corpus, truth] = generate_planted(spec);

  SaeConfig cfg;
  cfg.d = 64;
  cfg.epsilon = 2;  // latent_dim 128
  cfg.k = 8;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 256;
  cfg.epochs = 5;
  cfg.seed = 7;
  CorpusRowSource rows(corpus);
  const auto result = train(cfg, rows, std::max(1u, std::thread::hardware_concurrency()));
  const auto rec = match_atoms(result.model, truth, kRecoveryCosine);
  const double floor = spec.noise_floor();
  const bool ok = rec.matched_fraction >= kRecoveryFraction &&
                  result.report.final_loss <= kLossOverFloor * floor;
  return {ok, "recovered " + std::to_string(rec.matched) + "/32 at |cos|>=0.9 (mean matched " +
                  fmt("%.4f", rec.mean_matched_cosine) + "), final loss " +
                  fmt("%.5f", result.report.final_loss) + " vs floor " + fmt("%.5f", floor)};
}

// --- filter partition ---

Outcome filter_partition() {
  PlantedSpec spec;
  spec.d = 16;
  spec.m_true = 7;
  spec.k_true = 1;
  spec.n_tracks = 400;
  spec.steps_per_track = 8;
  spec.prevalence = {0.0, 0.005, 0.01, 0.02, 0.25, 0.26, 0.5};
  spec.seed = 404;
  const auto [corpus, truth] = generate_planted(spec);
  const SaeModel model = perfect_sae(truth, 1);
  const FilterPolicy policy;  // tau 0, theta_min 0.01, theta_max 0.25
  const FeatureCatalog cat = build_catalog(model, corpus, policy, 4);
  const std::vector<Verdict> want{Verdict::inactive, Verdict::obscure, Verdict::kept,
                                  Verdict::kept, Verdict::kept, Verdict::ubiquitous,
                                  Verdict::ubiquitous};
  const auto expected = plant_prevalence_catalog(spec, truth, policy);
  bool ok = true;
  std::string got;
  for (std::uint32_t i = 0; i < 7; ++i) {
    const auto& s = cat.feature(i);
    ok = ok && s.verdict == want[i] && expected[i].verdict == want[i] &&
         s.active_tracks == expected[i].active_tracks;
    got += std::string(i ? "," : "") + std::string(to_string(s.verdict));
  }
  return {ok, "{" + got + "}"};
}

// --- pipeline oracle ---

Outcome pipeline_oracle() {
  std::mt19937_64 rng(505);
  std::size_t features = 0, mismatches = 0;
  double worst_mu = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const auto corpus = fixtures::random_corpus(rng, 8, 20, 12);
    const SaeModel model = fixtures::random_model(rng, 8, 8, 5, -0.3f);  // latent 64
    FilterPolicy policy;
    policy.tau = trial % 2 == 0 ? 0.0 : 0.05;
    policy.top_n = trial % 3 == 0 ? 10 : 4;
    const TrackStats stats = compute_track_stats(model, corpus, policy, 4);
    const FeatureCatalog cat =
        summarize_and_filter(stats, policy, make_identity(model, corpus.manifest), "x");
    const auto naive = oracle::naive_catalog(model, corpus, policy.tau, policy.theta_min,
                                             policy.theta_max, policy.top_n);
    for (const auto& nf : naive) {
      ++features;
      const auto& s = cat.feature(nf.feature_id);
      bool same = s.rate == nf.rate && std::string(to_string(s.verdict)) == nf.verdict &&
                  s.top_examples.size() == nf.ranking.size();
      for (std::size_t j = 0; j < corpus.tracks.size(); ++j) {
        const std::size_t at = stats.at(nf.feature_id, j);
        worst_mu = std::max(worst_mu, std::abs(stats.mean[at] - nf.mu[j]));
        same = same && std::abs(stats.mean[at] - nf.mu[j]) <= kMuTol &&
               (stats.active[at] != 0) == nf.delta[j];
      }
      for (std::size_t r = 0; same && r < nf.ranking.size(); ++r) {
        same = s.top_examples[r].track_id == nf.ranking[r];
      }
      if (!same) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(features - mismatches) + "/" +
                               std::to_string(features) + " features identical, max |dmu| " +
                               fmt("%.1e", worst_mu)};
}

// --- steering ---

Outcome steering_identities() {
  std::mt19937_64 rng(606);
  const SaeModel model = fixtures::random_model(rng, 32, 2, 4);
  Matrix acts(50, 32);
  std::normal_distribution<float> val(0.0f, 1.0f);
  for (auto& v : acts.data) v = val(rng);
  acts(0, 0) = -0.0f;
  acts(1, 1) = 0.0f;

  bool identity = true;
  double worst_delta = 0.0, worst_control = 0.0;
  std::uniform_real_distribution<float> alpha(0.0f, 1.0f), beta(0.1f, 20.0f);
  SaeIdentity id{"fixture", 0, 2, 4, ""};
  for (std::uint32_t j = 0; j < model.latent_dim(); ++j) {
    const auto dir = model.decoder_column(j);
    const auto zero = make_steering_vector(id, j, dir, beta(rng), 0.0f);
    identity = identity && bit_equal(apply_steering(acts, zero).data, acts.data);

    const float a = alpha(rng), b = beta(rng);
    const auto v = make_steering_vector(id, j, dir, b, a);
    double dn = 0.0, nn = 0.0;
    for (float x : v.delta) dn += double(x) * x;
    for (float x : dir) nn += double(x) * x;
    const double want = double(a) * double(b) * std::sqrt(nn);
    worst_delta = std::max(worst_delta, std::abs(std::sqrt(dn) - want) / want);
  }
  const auto base = make_steering_vector(id, 3, model.decoder_column(3), 4.0f, 0.7f);
  double base_norm = 0.0;
  for (float x : base.delta) base_norm += double(x) * x;
  base_norm = std::sqrt(base_norm);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto c = random_control_vector(base, seed);
    double cn = 0.0;
    for (float x : c.delta) cn += double(x) * x;
    worst_control = std::max(worst_control, std::abs(std::sqrt(cn) - base_norm) / base_norm);
  }
  const bool ok = identity && worst_delta <= kNormRelTol && worst_control <= kNormRelTol;
  return {ok, std::string("alpha=0 identity ") + (identity ? "bit-exact" : "BROKEN") +
                  ", worst |delta| rel err " + fmt("%.1e", worst_delta) +
                  ", worst control norm rel err " + fmt("%.1e", worst_control)};
}

// --- co-activation ---

std::vector<FeatureCatalog> random_catalogs(std::mt19937_64& rng) {
  // Two layers of one model, a second SAE on layer 12, and another model.
  const std::vector<SaeIdentity> ids{{"musicgen-large", 12, 32, 100, "a"},
                                     {"musicgen-large", 24, 32, 100, "b"},
                                     {"musicgen-large", 12, 4, 32, "c"},
                                     {"musicgen-small", 6, 32, 100, "d"}};
  std::vector<std::string> tracks;
  for (int t = 0; t < 60; ++t) tracks.push_back("clip" + std::to_string(t));
  std::vector<FeatureCatalog> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& id : ids) {
    FeatureCatalog c;
    c.sae = id;
    c.corpus_digest = "shared";
    c.n_tracks = tracks.size();
    for (std::uint32_t f = 0; f < 70; ++f) {
      FeatureSummary s;
      s.feature_id = f;
      s.verdict = u(rng) < 0.7 ? Verdict::kept : Verdict::ubiquitous;
      auto pool = tracks;
      std::shuffle(pool.begin(), pool.end(), rng);
      const std::size_t n = 3 + rng() % 8;
      for (std::size_t r = 0; r < n; ++r) s.top_examples.push_back({pool[r], 1.0, 1.0f});
      c.summaries.push_back(std::move(s));
    }
    out.push_back(std::move(c));
  }
  return out;
}

Outcome coactivation_oracle() {
  std::mt19937_64 rng(707);
  const auto catalogs = random_catalogs(rng);
  std::size_t kept = 0;
  for (const auto& c : catalogs) kept += c.counts().kept;
  const auto got = coactivation_matrix(catalogs, 4);
  const auto want = oracle::naive_coactivation(catalogs);
  bool exact = got.size() == want.size();
  for (std::size_t i = 0; exact && i < got.size(); ++i) {
    exact = got[i].catalog_a == want[i].catalog_a && got[i].feature_a == want[i].feature_a &&
            got[i].catalog_b == want[i].catalog_b && got[i].feature_b == want[i].feature_b &&
            got[i].overlap == want[i].overlap &&
            std::string(to_string(got[i].relation)) == want[i].relation;
  }

  // Symmetry: recompute with the catalog list reversed and compare overlaps
  // of 1,000 random feature pairs looked up in both orientations.
  std::vector<FeatureCatalog> reversed(catalogs.rbegin(), catalogs.rend());
  const auto back = coactivation_matrix(reversed, 2);
  using Key = std::pair<std::pair<std::string, std::uint32_t>, std::pair<std::string, std::uint32_t>>;
  std::map<Key, std::uint32_t> fwd, rev;
  for (const auto& p : got) {
    fwd[{{catalogs[p.catalog_a].sae.checkpoint_digest, p.feature_a},
         {catalogs[p.catalog_b].sae.checkpoint_digest, p.feature_b}}] = p.overlap;
  }
  for (const auto& p : back) {
    rev[{{reversed[p.catalog_a].sae.checkpoint_digest, p.feature_a},
         {reversed[p.catalog_b].sae.checkpoint_digest, p.feature_b}}] = p.overlap;
  }
  std::vector<std::pair<std::string, std::uint32_t>> all;
  for (const auto& c : catalogs) {
    for (const auto& s : c.summaries) {
      if (s.verdict == Verdict::kept) all.push_back({c.sae.checkpoint_digest, s.feature_id});
    }
  }
  auto lookup = [](const std::map<Key, std::uint32_t>& m, const auto& a, const auto& b) {
    auto it = m.find({a, b});
    if (it != m.end()) return it->second;
    it = m.find({b, a});
    return it == m.end() ? 0u : it->second;
  };
  bool symmetric = true;
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = all[pick(rng)];
    auto b = all[pick(rng)];
    if (a == b) b = all[(pick(rng) + 1) % all.size()];
    if (a == b) continue;
    symmetric = symmetric && lookup(fwd, a, b) == lookup(rev, b, a);
  }
  return {exact && symmetric && kept <= 200,
          std::to_string(got.size()) + " pairs over " + std::to_string(kept) +
              " kept features, oracle " + (exact ? "exact" : "MISMATCH") + ", symmetry " +
              (symmetric ? "holds" : "BROKEN")};
}

// --- layer probe ---

std::vector<FeatureProfiles> layered_profiles(std::mt19937_64& rng) {
  const std::uint32_t layers[5] = {2, 12, 24, 36, 46};
  std::vector<std::string> tracks;
  for (int t = 0; t < 24; ++t) tracks.push_back("clip" + std::to_string(t));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<FeatureProfiles> out;
  for (std::uint32_t l = 0; l < 5; ++l) {
    FeatureProfiles p;
    p.sae = {"musicgen-large", layers[l], 32, 100, "x"};
    p.track_ids = tracks;
    // Each layer's features concentrate on a different band of tracks.
    std::vector<double> centre(tracks.size(), 0.0);
    for (std::size_t t = l * 4; t < l * 4 + 6 && t < tracks.size(); ++t) centre[t] = 3.0;
    for (std::uint32_t f = 0; f < 40; ++f) {
      std::vector<double> prof(tracks.size());
      for (std::size_t t = 0; t < prof.size(); ++t) prof[t] = centre[t] + noise(rng);
      p.feature_ids.push_back(f);
      p.profiles.push_back(std::move(prof));
    }
    out.push_back(std::move(p));
  }
  return out;
}

Outcome layer_probe() {
  std::mt19937_64 rng(808);
  const auto profiles = layered_profiles(rng);
  ProbeDataset data = build_probe_dataset(profiles);
  ProbeOptions opts;
  opts.seed = 9;
  opts.epochs = 60;
  const ProbeReport sep = train_layer_probe(data, opts);

  std::shuffle(data.labels.begin(), data.labels.end(), rng);
  const ProbeReport perm = train_layer_probe(data, opts);
  const double n = static_cast<double>(data.labels.size());
  const double sigma = std::sqrt(0.2 * 0.8 / n);
  const bool ok = sep.mean_accuracy >= kProbeSeparable &&
                  std::abs(perm.mean_accuracy - 0.2) <= kProbeSigmas * sigma;
  return {ok, "separable " + fmt("%.3f", sep.mean_accuracy) + " +/- " +
                  fmt("%.3f", sep.std_accuracy) + ", permuted " +
                  fmt("%.3f", perm.mean_accuracy) + " (chance 0.200, 3 sigma " +
                  fmt("%.3f", kProbeSigmas * sigma) + ")"};
}

// --- round trips ---

Outcome format_round_trips() {
  std::mt19937_64 rng(909);
  const fs::path dir = fixtures::temp_dir("roundtrip");
  int ok_actv = 0, ok_ckpt = 0, ok_cat = 0, ok_steer = 0;
  std::uniform_int_distribution<std::uint32_t> dim(1, 24);
  for (int i = 0; i < 100; ++i) {
    const std::uint32_t d = dim(rng);
    auto corpus = fixtures::random_corpus(rng, d, rng() % 6, 9, "id-" + std::to_string(i) + "-");
    if (!corpus.tracks.empty()) corpus.tracks[0].data.data[0] = -0.0f;
    std::ostringstream a;
    write_corpus(corpus, a);
    std::istringstream ain(a.str());
    auto back = read_corpus(ain);
    // Descriptive manifest fields travel in the sidecar, not the binary.
    back.manifest.model_name = corpus.manifest.model_name;
    std::ostringstream a2;
    write_corpus(back, a2);
    ok_actv += bit_identical(corpus, back) && a.str() == a2.str();

    const SaeModel m = fixtures::random_model(rng, d, 1 + rng() % 3, 1);
    const std::string bytes = save_checkpoint(m);
    const SaeModel m2 = load_checkpoint(bytes);
    ok_ckpt += bit_identical(m, m2) && save_checkpoint(m2) == bytes;

    FeatureCatalog cat;
    cat.sae = {"musicgen-small", 6, m.config.epsilon, 1, checkpoint_digest(m)};
    cat.corpus_digest = track_set_digest(corpus);
    cat.n_tracks = corpus.tracks.size();
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::uint32_t f = 0; f < m.latent_dim(); ++f) {
      FeatureSummary s;
      s.feature_id = f;
      s.rate = std::abs(g(rng));
      s.active_tracks = rng() % 50;
      s.verdict = static_cast<Verdict>(rng() % 4);
      s.mean_strength = g(rng);
      for (int e = 0; e < int(rng() % 4); ++e) {
        s.top_examples.push_back({"t\"" + std::to_string(e), g(rng), static_cast<float>(g(rng))});
      }
      cat.summaries.push_back(std::move(s));
    }
    std::ostringstream c1;
    write_catalog(cat, c1);
    std::istringstream cin(c1.str());
    const auto cat2 = read_catalog(cin);
    std::ostringstream c2;
    write_catalog(cat2, c2);
    ok_cat += cat2 == cat && c1.str() == c2.str();

    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const auto v = make_steering_vector(cat.sae, 0, m.decoder_column(0), 0.5f + u(rng), u(rng));
    const auto vc = i % 2 ? random_control_vector(v, rng()) : v;
    const fs::path p = dir / ("v" + std::to_string(i) + ".json");
    write_steering_vector(vc, p);
    ok_steer += bit_identical(read_steering_vector(p), vc);
  }
  fs::remove_all(dir);
  const bool ok = ok_actv == 100 && ok_ckpt == 100 && ok_cat == 100 && ok_steer == 100;
  return {ok, "ACTV " + std::to_string(ok_actv) + ", checkpoint " + std::to_string(ok_ckpt) +
                  ", catalog " + std::to_string(ok_cat) + ", steering " +
                  std::to_string(ok_steer) + " of 100"};
}

// --- determinism ---

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path dir = fixtures::temp_dir("determinism");
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) { return run_cli(args, sink, sink); };
  const std::string corpus = (dir / "synth.actv").string();
  int rc = cli({"synth", "--d", "32", "--m-true", "24", "--k-true", "3", "--n-tracks", "120",
                "--steps-per-track", "50", "--noise-sigma", "0.01", "--seed", "7", "--output",
                corpus});
  bool ok = rc == 0;
  std::vector<std::string> ckpts, cats;
  const std::vector<std::string> threads{"1", "1", "4", "4"};
  for (std::size_t run = 0; run < threads.size(); ++run) {
    const std::string ck = (dir / ("r" + std::to_string(run) + ".ckpt")).string();
    const std::string ca = (dir / ("r" + std::to_string(run) + ".jsonl")).string();
    rc = cli({"--threads", threads[run], "train", "--corpus", corpus, "--output", ck, "--k", "6",
              "--epsilon", "2", "--epochs", "3", "--batch-size", "128", "--seed", "11"});
    ok = ok && rc == 0;
    rc = cli({"--threads", threads[run], "catalog", "--corpus", corpus, "--checkpoint", ck,
              "--output", ca});
    ok = ok && rc == 0;
    ckpts.push_back(slurp(ck));
    cats.push_back(slurp(ca));
  }
  bool same = !ckpts[0].empty() && !cats[0].empty();
  for (std::size_t r = 1; r < ckpts.size(); ++r) {
    same = same && ckpts[r] == ckpts[0] && cats[r] == cats[0];
  }
  fs::remove_all(dir);
  return {ok && same, std::string("4 runs (threads 1,1,4,4): checkpoints and catalogs ") +
                          (same ? "byte-identical" : "DIFFER") +
                          (ok ? "" : "; a CLI step failed: " + sink.str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"top-k projection oracle", 1.0, topk_oracle},
      {"gradient check", 10.0, gradient_check},
      {"dictionary recovery", 600.0, dictionary_recovery},
      {"filter partition oracle", 5.0, filter_partition},
      {"pipeline oracle equivalence", 5.0, pipeline_oracle},
      {"steering identities", 5.0, steering_identities},
      {"co-activation oracle", 10.0, coactivation_oracle},
      {"layer-probe sanity", 120.0, layer_probe},
      {"format round-trips", 10.0, format_round_trips},
      {"determinism", 600.0, determinism},
  };
  std::string only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--list") == 0) {
      for (const auto& c : criteria) std::cout << c.name << '\n';
      return 0;
    }
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = argv[++i];
  }
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && c.name != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << o.detail << "; "
              << fmt("%.2f", secs) << "s of " << fmt("%.0f", c.budget_seconds) << "s"
              << (in_budget ? "" : ", OVER BUDGET") << ")" << std::endl;
  }
  return failures;
}
