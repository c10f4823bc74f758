#include "latent_forge/feature_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>

#include "latent_forge/parallel.hpp"

namespace latent_forge {

void FilterPolicy::validate() const {
  if (!(tau >= 0.0)) throw ConfigError("filter policy: tau must be >= 0");
  if (!(theta_max > 0.0 && theta_max <= 1.0)) {
    throw ConfigError("filter policy: theta_max must be in (0, 1]");
  }
  if (!(theta_min > 0.0 && theta_min < 1.0)) {
    throw ConfigError("filter policy: theta_min must be in (0, 1)");
  }
  if (!(theta_min < theta_max)) {
    throw ConfigError("filter policy: theta_min must be below theta_max");
  }
  if (top_n == 0) throw ConfigError("filter policy: top_n must be positive");
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kept: return "kept";
    case Verdict::inactive: return "inactive";
    case Verdict::ubiquitous: return "ubiquitous";
    case Verdict::obscure: return "obscure";
  }
  return "unknown";
}

Verdict verdict_from_string(std::string_view s) {
  if (s == "kept") return Verdict::kept;
  if (s == "inactive") return Verdict::inactive;
  if (s == "ubiquitous") return Verdict::ubiquitous;
  if (s == "obscure") return Verdict::obscure;
  throw FormatError("unknown verdict '" + std::string(s) + "'");
}

Verdict classify_rate(double rate, const FilterPolicy& policy) {
  if (rate == 0.0) return Verdict::inactive;
  if (rate > policy.theta_max) return Verdict::ubiquitous;
  if (rate < policy.theta_min) return Verdict::obscure;
  return Verdict::kept;
}

TrackStats compute_track_stats(const SaeModel& model, const ActivationCorpus& corpus,
                               const FilterPolicy& policy, unsigned threads) {
  policy.validate();
  require_input_dim(model, corpus.dim());
  if (corpus.tracks.empty()) throw DataError("track stats: empty corpus");
  const std::size_t N = corpus.tracks.size();
  const std::uint32_t L = model.latent_dim();

  TrackStats stats;
  stats.latent_dim = L;
  stats.track_ids.reserve(N);
  for (const auto& t : corpus.tracks) stats.track_ids.push_back(t.track_id);
  stats.mean.assign(static_cast<std::size_t>(L) * N, 0.0);
  stats.max.assign(static_cast<std::size_t>(L) * N, 0.0f);
  stats.active.assign(static_cast<std::size_t>(L) * N, 0);

  parallel_for(N, threads, [&](std::size_t j) {
    const auto& track = corpus.tracks[j];
    std::vector<double> sum(L, 0.0);
    std::vector<float> peak(L, 0.0f);
    for (std::size_t t = 0; t < track.steps(); ++t) {
      const LatentCode code = encode(model, track.data.row(t));
      for (auto i : code.active) {
        sum[i] += code.sparse[i];
        peak[i] = std::max(peak[i], code.sparse[i]);
      }
    }
    const double steps = static_cast<double>(track.steps());
    for (std::uint32_t i = 0; i < L; ++i) {
      const std::size_t at = stats.at(i, j);
      stats.mean[at] = sum[i] / steps;
      stats.max[at] = peak[i];
      stats.active[at] = static_cast<double>(peak[i]) > policy.tau ? 1 : 0;
    }
  });
  return stats;
}

std::vector<TopExample> select_top_examples(const TrackStats& stats,
                                            std::uint32_t feature,
                                            std::uint32_t top_n) {
  if (top_n == 0) throw ConfigError("select_top_examples: top_n must be positive");
  std::vector<std::size_t> eligible;
  for (std::size_t j = 0; j < stats.n_tracks(); ++j) {
    if (stats.active[stats.at(feature, j)]) eligible.push_back(j);
  }
  auto order = [&](std::size_t a, std::size_t b) {
    const double ma = stats.mean[stats.at(feature, a)];
    const double mb = stats.mean[stats.at(feature, b)];
    if (ma != mb) return ma > mb;
    return stats.track_ids[a] < stats.track_ids[b];
  };
  const std::size_t n = std::min<std::size_t>(top_n, eligible.size());
  std::partial_sort(eligible.begin(), eligible.begin() + n, eligible.end(), order);
  std::vector<TopExample> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t j = eligible[r];
    const std::size_t at = stats.at(feature, j);
    out.push_back({stats.track_ids[j], stats.mean[at], stats.max[at]});
  }
  return out;
}

std::string SaeIdentity::label() const {
  return model_name + "/L" + std::to_string(layer_index) + "/e" +
         std::to_string(epsilon) + "/k" + std::to_string(k);
}

nlohmann::json to_json(const SaeIdentity& id) {
  return {{"model_name", id.model_name},
          {"layer_index", id.layer_index},
          {"epsilon", id.epsilon},
          {"k", id.k},
          {"checkpoint_digest", id.checkpoint_digest}};
}

SaeIdentity sae_identity_from_json(const nlohmann::json& j) {
  try {
    SaeIdentity id;
    id.model_name = j.at("model_name").get<std::string>();
    id.layer_index = j.at("layer_index").get<std::uint32_t>();
    id.epsilon = j.at("epsilon").get<std::uint32_t>();
    id.k = j.at("k").get<std::uint32_t>();
    id.checkpoint_digest = j.value("checkpoint_digest", std::string{});
    return id;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sae identity: ") + e.what());
  }
}

SaeIdentity make_identity(const SaeModel& model, const CorpusManifest& manifest) {
  return {manifest.model_name, manifest.layer_index, model.config.epsilon,
          model.config.k, checkpoint_digest(model)};
}

VerdictCounts FeatureCatalog::counts() const {
  VerdictCounts c;
  for (const auto& s : summaries) {
    switch (s.verdict) {
      case Verdict::kept: ++c.kept; break;
      case Verdict::inactive: ++c.inactive; break;
      case Verdict::ubiquitous: ++c.ubiquitous; break;
      case Verdict::obscure: ++c.obscure; break;
    }
  }
  return c;
}

const FeatureSummary& FeatureCatalog::feature(std::uint32_t id) const {
  if (id >= summaries.size() || summaries[id].feature_id != id) {
    auto it = std::find_if(summaries.begin(), summaries.end(),
                           [&](const FeatureSummary& s) { return s.feature_id == id; });
    if (it == summaries.end()) {
      throw DataError("catalog: no feature " + std::to_string(id));
    }
    return *it;
  }
  return summaries[id];
}

FeatureCatalog summarize_and_filter(const TrackStats& stats, const FilterPolicy& policy,
                                    SaeIdentity sae, std::string corpus_digest) {
  policy.validate();
  const std::size_t N = stats.n_tracks();
  if (N == 0) throw DataError("summarize: no tracks");
  FeatureCatalog catalog;
  catalog.sae = std::move(sae);
  catalog.policy = policy;
  catalog.corpus_digest = std::move(corpus_digest);
  catalog.n_tracks = N;
  catalog.summaries.reserve(stats.latent_dim);
  for (std::uint32_t i = 0; i < stats.latent_dim; ++i) {
    FeatureSummary s;
    s.feature_id = i;
    double strength = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t at = stats.at(i, j);
      if (stats.active[at]) {
        ++s.active_tracks;
        strength += stats.mean[at];
      }
    }
    s.rate = static_cast<double>(s.active_tracks) / static_cast<double>(N);
    s.mean_strength =
        s.active_tracks > 0 ? strength / static_cast<double>(s.active_tracks) : 0.0;
    s.verdict = classify_rate(s.rate, policy);
    s.top_examples = select_top_examples(stats, i, policy.top_n);
    catalog.summaries.push_back(std::move(s));
  }
  return catalog;
}

FeatureCatalog build_catalog(const SaeModel& model, const ActivationCorpus& corpus,
                             const FilterPolicy& policy, unsigned threads) {
  const TrackStats stats = compute_track_stats(model, corpus, policy, threads);
  return summarize_and_filter(stats, policy, make_identity(model, corpus.manifest),
                              track_set_digest(corpus));
}

// --- JSONL ---

namespace {

nlohmann::json policy_json(const FilterPolicy& p) {
  return {{"tau", p.tau},
          {"theta_max", p.theta_max},
          {"theta_min", p.theta_min},
          {"top_n", p.top_n}};
}

FilterPolicy policy_from_json(const nlohmann::json& j) {
  FilterPolicy p;
  p.tau = j.at("tau").get<double>();
  p.theta_max = j.at("theta_max").get<double>();
  p.theta_min = j.at("theta_min").get<double>();
  p.top_n = j.at("top_n").get<std::uint32_t>();
  return p;
}

}  // namespace

void write_catalog(const FeatureCatalog& catalog, std::ostream& out) {
  nlohmann::json header = {{"format", "latent-forge-catalog"},
                           {"version", 1},
                           {"sae", to_json(catalog.sae)},
                           {"policy", policy_json(catalog.policy)},
                           {"corpus_digest", catalog.corpus_digest},
                           {"n_tracks", catalog.n_tracks},
                           {"latent_dim", catalog.summaries.size()}};
  out << header.dump() << '\n';
  for (const auto& s : catalog.summaries) {
    nlohmann::json examples = nlohmann::json::array();
    for (const auto& e : s.top_examples) {
      examples.push_back({{"track_id", e.track_id}, {"mu", e.mu}, {"max", e.max}});
    }
    nlohmann::json line = {{"feature_id", s.feature_id},
                           {"r", s.rate},
                           {"active_tracks", s.active_tracks},
                           {"verdict", to_string(s.verdict)},
                           {"mean_strength", s.mean_strength},
                           {"top_examples", std::move(examples)}};
    out << line.dump() << '\n';
  }
  if (!out) throw DataError("catalog: write failure");
}

FeatureCatalog read_catalog(std::istream& in) {
  FeatureCatalog catalog;
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t expected = 0;
  try {
    if (!std::getline(in, line)) throw FormatError("catalog: missing header line");
    ++line_no;
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", std::string{}) != "latent-forge-catalog") {
      throw FormatError("catalog: header line is not a catalog header");
    }
    catalog.sae = sae_identity_from_json(header.at("sae"));
    catalog.policy = policy_from_json(header.at("policy"));
    catalog.corpus_digest = header.at("corpus_digest").get<std::string>();
    catalog.n_tracks = header.at("n_tracks").get<std::uint64_t>();
    expected = header.at("latent_dim").get<std::uint64_t>();
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      FeatureSummary s;
      s.feature_id = j.at("feature_id").get<std::uint32_t>();
      s.rate = j.at("r").get<double>();
      s.active_tracks = j.at("active_tracks").get<std::uint64_t>();
      s.verdict = verdict_from_string(j.at("verdict").get<std::string>());
      s.mean_strength = j.at("mean_strength").get<double>();
      for (const auto& e : j.at("top_examples")) {
        s.top_examples.push_back({e.at("track_id").get<std::string>(),
                                  e.at("mu").get<double>(),
                                  static_cast<float>(e.at("max").get<double>())});
      }
      catalog.summaries.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("catalog: line " + std::to_string(line_no) + ": " + e.what());
  }
  if (catalog.summaries.size() != expected) {
    throw FormatError("catalog: header declares " + std::to_string(expected) +
                      " features, found " + std::to_string(catalog.summaries.size()));
  }
  return catalog;
}

void write_catalog_file(const FeatureCatalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("catalog: cannot open " + path.string());
  write_catalog(catalog, out);
}

FeatureCatalog read_catalog_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("catalog: cannot open " + path.string());
  return read_catalog(in);
}

// --- reports ---

PrevalenceReport prevalence_report(const FeatureCatalog& catalog) {
  if (catalog.summaries.empty()) throw DataError("prevalence report: empty catalog");
  PrevalenceReport report;
  report.points.reserve(catalog.summaries.size());
  for (const auto& s : catalog.summaries) {
    report.points.push_back({s.feature_id, s.rate, s.mean_strength, s.verdict});
  }
  report.row = {catalog.sae.model_name, catalog.sae.layer_index, catalog.sae.epsilon,
                catalog.sae.k, catalog.counts()};
  return report;
}

std::vector<FeatureCountRow> feature_count_table(std::span<const FeatureCatalog> catalogs) {
  std::vector<FeatureCountRow> rows;
  for (const auto& c : catalogs) rows.push_back(prevalence_report(c).row);
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.model_name, a.epsilon, a.k, a.layer_index) <
           std::tie(b.model_name, b.epsilon, b.k, b.layer_index);
  });
  return rows;
}

void write_feature_count_csv(std::span<const FeatureCountRow> rows, std::ostream& out) {
  out << "model,layer,epsilon,k,kept,inactive,ubiquitous,obscure,total\n";
  for (const auto& r : rows) {
    out << r.model_name << ',' << r.layer_index << ',' << r.epsilon << ',' << r.k << ','
        << r.counts.kept << ',' << r.counts.inactive << ',' << r.counts.ubiquitous << ','
        << r.counts.obscure << ',' << r.counts.total() << '\n';
  }
}

nlohmann::json prevalence_plot_data(std::span<const FeatureCatalog> catalogs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : catalogs) {
    const auto report = prevalence_report(c);
    nlohmann::json rate = nlohmann::json::array();
    nlohmann::json strength = nlohmann::json::array();
    nlohmann::json verdict = nlohmann::json::array();
    for (const auto& p : report.points) {
      rate.push_back(p.rate);
      strength.push_back(p.mean_strength);
      verdict.push_back(to_string(p.verdict));
    }
    out.push_back({{"sae", c.sae.label()},
                   {"rate", std::move(rate)},
                   {"mean_strength", std::move(strength)},
                   {"verdict", std::move(verdict)}});
  }
  return out;
}

FeatureProfiles kept_feature_profiles(const TrackStats& stats,
                                      const FeatureCatalog& catalog) {
  if (stats.latent_dim != catalog.summaries.size()) {
    throw DimensionError("profiles: stats and catalog disagree on latent_dim");
  }
  FeatureProfiles p;
  p.sae = catalog.sae;
  p.track_ids = stats.track_ids;
  for (const auto& s : catalog.summaries) {
    if (s.verdict != Verdict::kept) continue;
    p.feature_ids.push_back(s.feature_id);
    std::vector<double> profile(stats.n_tracks());
    for (std::size_t j = 0; j < stats.n_tracks(); ++j) {
      profile[j] = stats.mean[stats.at(s.feature_id, j)];
    }
    p.profiles.push_back(std::move(profile));
  }
  return p;
}

nlohmann::json to_json(const FeatureProfiles& p) {
  return {{"sae", to_json(p.sae)},
          {"track_ids", p.track_ids},
          {"feature_ids", p.feature_ids},
          {"profiles", p.profiles}};
}

FeatureProfiles feature_profiles_from_json(const nlohmann::json& j) {
  try {
    FeatureProfiles p;
    p.sae = sae_identity_from_json(j.at("sae"));
    p.track_ids = j.at("track_ids").get<std::vector<std::string>>();
    p.feature_ids = j.at("feature_ids").get<std::vector<std::uint32_t>>();
    p.profiles = j.at("profiles").get<std::vector<std::vector<double>>>();
    if (p.profiles.size() != p.feature_ids.size()) {
      throw FormatError("profiles: feature_ids and profiles differ in length");
    }
    for (const auto& row : p.profiles) {
      if (row.size() != p.track_ids.size()) {
        throw FormatError("profiles: profile length differs from track count");
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("profiles: ") + e.what());
  }
}

}  // namespace latent_forge
