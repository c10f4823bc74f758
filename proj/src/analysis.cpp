#include "latent_forge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include "latent_forge/adam.hpp"
#include "latent_forge/parallel.hpp"

namespace latent_forge {

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::within_layer: return "within-layer";
    case Relation::cross_layer: return "cross-layer";
    case Relation::cross_sae: return "cross-sae";
    case Relation::cross_model: return "cross-model";
  }
  return "unknown";
}

Relation classify_relation(const SaeIdentity& a, const SaeIdentity& b) {
  if (a.model_name != b.model_name) return Relation::cross_model;
  if (a.layer_index != b.layer_index) return Relation::cross_layer;
  if (a.same_config(b) && a.checkpoint_digest == b.checkpoint_digest) {
    return Relation::within_layer;
  }
  return Relation::cross_sae;
}

namespace {

struct KeptFeature {
  std::uint32_t catalog;
  std::uint32_t feature;
  std::vector<std::uint32_t> tracks;  // interned ids, sorted
};

}  // namespace

std::vector<CoactivationPair> coactivation_matrix(std::span<const FeatureCatalog> catalogs,
                                                  unsigned threads) {
  for (const auto& c : catalogs) {
    if (c.corpus_digest != catalogs.front().corpus_digest) {
      throw DataError("coactivation: catalogs were built on different validation corpora (" +
                      catalogs.front().sae.label() + " vs " + c.sae.label() + ")");
    }
  }
  std::unordered_map<std::string, std::uint32_t> intern;
  std::vector<KeptFeature> kept;
  for (std::uint32_t ci = 0; ci < catalogs.size(); ++ci) {
    std::vector<const FeatureSummary*> ordered;
    for (const auto& s : catalogs[ci].summaries) {
      if (s.verdict == Verdict::kept) ordered.push_back(&s);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](auto* a, auto* b) { return a->feature_id < b->feature_id; });
    for (const auto* s : ordered) {
      KeptFeature f{ci, s->feature_id, {}};
      for (const auto& ex : s->top_examples) {
        auto [it, _] = intern.emplace(ex.track_id, static_cast<std::uint32_t>(intern.size()));
        f.tracks.push_back(it->second);
      }
      std::sort(f.tracks.begin(), f.tracks.end());
      f.tracks.erase(std::unique(f.tracks.begin(), f.tracks.end()), f.tracks.end());
      kept.push_back(std::move(f));
    }
  }

  std::vector<std::vector<std::uint32_t>> by_track(intern.size());
  for (std::uint32_t g = 0; g < kept.size(); ++g) {
    for (auto t : kept[g].tracks) by_track[t].push_back(g);
  }

  std::vector<std::vector<CoactivationPair>> per_feature(kept.size());
  parallel_for(kept.size(), threads, [&](std::size_t g) {
    std::map<std::uint32_t, std::uint32_t> counts;
    for (auto t : kept[g].tracks) {
      for (auto h : by_track[t]) {
        if (h > g) ++counts[h];
      }
    }
    const auto& a = kept[g];
    for (const auto& [h, overlap] : counts) {
      const auto& b = kept[h];
      per_feature[g].push_back(
          {a.catalog, a.feature, b.catalog, b.feature,
           classify_relation(catalogs[a.catalog].sae, catalogs[b.catalog].sae), overlap});
    }
  });

  std::vector<CoactivationPair> out;
  for (auto& v : per_feature) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void write_coactivation_csv(std::span<const CoactivationPair> pairs,
                            std::span<const FeatureCatalog> catalogs, std::ostream& out) {
  out << "sae_a,feature_a,sae_b,feature_b,relation,overlap\n";
  for (const auto& p : pairs) {
    out << catalogs[p.catalog_a].sae.label() << ',' << p.feature_a << ','
        << catalogs[p.catalog_b].sae.label() << ',' << p.feature_b << ','
        << to_string(p.relation) << ',' << p.overlap << '\n';
  }
}

namespace {

std::string depth_bucket(const SaeIdentity& id) {
  const auto* preset = find_preset(id.model_name);
  if (preset == nullptr) return {};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f",
                static_cast<double>(id.layer_index) / static_cast<double>(preset->depth));
  return buf;
}

}  // namespace

CoactivationSummary coactivation_summary(std::span<const CoactivationPair> pairs,
                                         std::span<const FeatureCatalog> catalogs) {
  CoactivationSummary s;
  for (const auto& p : pairs) {
    ++s.histograms[p.relation][p.overlap];
    const SaeIdentity& a = catalogs[p.catalog_a].sae;
    const SaeIdentity& b = catalogs[p.catalog_b].sae;
    auto add = [&](PairAggregate& agg) {
      ++agg.pairs;
      agg.overlap_sum += p.overlap;
    };
    switch (p.relation) {
      case Relation::cross_layer: {
        if (!a.same_config(b)) break;
        const std::string key = a.model_name + "/e" + std::to_string(a.epsilon) + "/k" +
                                std::to_string(a.k);
        auto& cells = s.layer_pairs[key];
        add(cells[{std::min(a.layer_index, b.layer_index),
                   std::max(a.layer_index, b.layer_index)}]);
        break;
      }
      case Relation::cross_sae: {
        auto la = a.label(), lb = b.label();
        if (lb < la) std::swap(la, lb);
        add(s.sae_pairs[{la, lb}]);
        break;
      }
      case Relation::cross_model: {
        auto da = depth_bucket(a), db = depth_bucket(b);
        if (da.empty() || db.empty()) break;
        if (a.model_name > b.model_name) std::swap(da, db);
        add(s.model_depth_pairs[{da, db}]);
        break;
      }
      case Relation::within_layer:
        break;
    }
  }
  // Within-layer co-activations are excluded from the cross-layer matrix, so
  // its diagonal is explicitly zero for every layer that appears.
  for (auto& [key, cells] : s.layer_pairs) {
    std::set<std::uint32_t> layers;
    for (const auto& [lp, _] : cells) {
      layers.insert(lp.first);
      layers.insert(lp.second);
    }
    for (auto l : layers) cells[{l, l}] = PairAggregate{};
  }
  return s;
}

nlohmann::json to_json(const CoactivationSummary& s) {
  nlohmann::json j;
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [rel, counts] : s.histograms) {
    nlohmann::json h = nlohmann::json::object();
    for (const auto& [overlap, n] : counts) h[std::to_string(overlap)] = n;
    hist[std::string(to_string(rel))] = std::move(h);
  }
  j["histograms"] = std::move(hist);
  auto agg = [](const PairAggregate& a) {
    return nlohmann::json{{"pairs", a.pairs},
                          {"overlap_sum", a.overlap_sum},
                          {"mean_overlap", a.mean_overlap()}};
  };
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [key, cells] : s.layer_pairs) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [lp, a] : cells) {
      auto cell = agg(a);
      cell["layer_a"] = lp.first;
      cell["layer_b"] = lp.second;
      rows.push_back(std::move(cell));
    }
    layers[key] = std::move(rows);
  }
  j["cross_layer"] = std::move(layers);
  nlohmann::json saes = nlohmann::json::array();
  for (const auto& [k, a] : s.sae_pairs) {
    auto cell = agg(a);
    cell["sae_a"] = k.first;
    cell["sae_b"] = k.second;
    saes.push_back(std::move(cell));
  }
  j["cross_sae"] = std::move(saes);
  nlohmann::json models = nlohmann::json::array();
  for (const auto& [k, a] : s.model_depth_pairs) {
    auto cell = agg(a);
    cell["depth_a"] = k.first;
    cell["depth_b"] = k.second;
    models.push_back(std::move(cell));
  }
  j["cross_model"] = std::move(models);
  return j;
}

// --- probe ---

void ProbeDataset::validate(std::uint32_t folds) const {
  if (folds < 2) throw ConfigError("probe: folds must be >= 2");
  if (profiles.size() != labels.size() || profiles.empty()) {
    throw DataError("probe: dataset is empty or inconsistent");
  }
  const std::size_t dim = profiles.front().size();
  if (dim == 0) throw DataError("probe: empty profiles");
  std::vector<std::uint64_t> per_class(layers.size(), 0);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    if (profiles[i].size() != dim) throw DimensionError("probe: profiles differ in length");
    if (labels[i] >= layers.size()) throw DataError("probe: label outside layer set");
    ++per_class[labels[i]];
  }
  std::size_t represented = 0;
  for (auto n : per_class) {
    if (n > 0) ++represented;
  }
  if (represented < 2) {
    throw DataError("probe: degenerate dataset, need at least 2 layers represented");
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] > 0 && per_class[c] < folds) {
      throw DataError("probe: layer " + layers[c] + " has " + std::to_string(per_class[c]) +
                      " samples, fewer than " + std::to_string(folds) + " folds");
    }
  }
}

ProbeDataset build_probe_dataset(std::span<const FeatureProfiles> inputs) {
  if (inputs.empty()) throw DataError("probe: no profile inputs");
  std::set<std::string> shared(inputs.front().track_ids.begin(), inputs.front().track_ids.end());
  for (const auto& in : inputs.subspan(1)) {
    std::set<std::string> ids(in.track_ids.begin(), in.track_ids.end());
    std::set<std::string> keep;
    std::set_intersection(shared.begin(), shared.end(), ids.begin(), ids.end(),
                          std::inserter(keep, keep.end()));
    shared = std::move(keep);
  }
  if (shared.empty()) throw DataError("probe: inputs share no tracks");
  std::set<std::uint32_t> layer_set;
  for (const auto& in : inputs) layer_set.insert(in.sae.layer_index);
  ProbeDataset data;
  std::map<std::uint32_t, std::uint32_t> label_of;
  for (auto l : layer_set) {
    label_of[l] = static_cast<std::uint32_t>(data.layers.size());
    data.layers.push_back("L" + std::to_string(l));
  }
  for (const auto& in : inputs) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < in.track_ids.size(); ++j) {
      if (shared.count(in.track_ids[j])) cols.push_back(j);
    }
    std::sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) {
      return in.track_ids[a] < in.track_ids[b];
    });
    for (const auto& profile : in.profiles) {
      std::vector<float> p;
      p.reserve(cols.size());
      for (auto j : cols) p.push_back(static_cast<float>(profile[j]));
      data.profiles.push_back(std::move(p));
      data.labels.push_back(label_of[in.sae.layer_index]);
    }
  }
  return data;
}

namespace {

class Mlp {
 public:
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng)
      : in_(in), hidden_(hidden), out_(out), w1_(hidden * in), b1_(hidden, 0.0),
        w2_(out * hidden), b2_(out, 0.0) {
    std::uniform_real_distribution<double> u1(-std::sqrt(6.0 / in), std::sqrt(6.0 / in));
    for (auto& w : w1_) w = u1(rng);
    const double lim2 = std::sqrt(6.0 / static_cast<double>(hidden + out));
    std::uniform_real_distribution<double> u2(-lim2, lim2);
    for (auto& w : w2_) w = u2(rng);
  }

  std::size_t param_count() const { return w1_.size() + b1_.size() + w2_.size() + b2_.size(); }

  // Forward pass; fills hidden activations and softmax probabilities.
  void forward(const double* x, std::vector<double>& h, std::vector<double>& p) const {
    h.assign(hidden_, 0.0);
    for (std::size_t u = 0; u < hidden_; ++u) {
      double a = b1_[u];
      const double* w = w1_.data() + u * in_;
      for (std::size_t i = 0; i < in_; ++i) a += w[i] * x[i];
      h[u] = a > 0.0 ? a : 0.0;
    }
    p.assign(out_, 0.0);
    double mx = -1e300;
    for (std::size_t c = 0; c < out_; ++c) {
      double a = b2_[c];
      const double* w = w2_.data() + c * hidden_;
      for (std::size_t u = 0; u < hidden_; ++u) a += w[u] * h[u];
      p[c] = a;
      mx = std::max(mx, a);
    }
    double z = 0.0;
    for (auto& v : p) {
      v = std::exp(v - mx);
      z += v;
    }
    for (auto& v : p) v /= z;
  }

  std::size_t predict(const double* x) const {
    std::vector<double> h, p;
    forward(x, h, p);
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  // One Adam step on the mean cross-entropy of the given rows.
  void train_step(const std::vector<const double*>& xs, const std::vector<std::uint32_t>& ys,
                  Adam<double>& opt, double lr, std::uint64_t t) {
    std::vector<double> grad(param_count(), 0.0);
    double* gw1 = grad.data();
    double* gb1 = gw1 + w1_.size();
    double* gw2 = gb1 + b1_.size();
    double* gb2 = gw2 + w2_.size();
    std::vector<double> h, p, dh(hidden_);
    const double scale = 1.0 / static_cast<double>(xs.size());
    for (std::size_t r = 0; r < xs.size(); ++r) {
      forward(xs[r], h, p);
      p[ys[r]] -= 1.0;
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t c = 0; c < out_; ++c) {
        const double g = p[c] * scale;
        gb2[c] += g;
        for (std::size_t u = 0; u < hidden_; ++u) {
          gw2[c * hidden_ + u] += g * h[u];
          dh[u] += g * w2_[c * hidden_ + u];
        }
      }
      for (std::size_t u = 0; u < hidden_; ++u) {
        if (h[u] <= 0.0) continue;
        gb1[u] += dh[u];
        for (std::size_t i = 0; i < in_; ++i) gw1[u * in_ + i] += dh[u] * xs[r][i];
      }
    }
    std::vector<double> params;
    params.reserve(param_count());
    params.insert(params.end(), w1_.begin(), w1_.end());
    params.insert(params.end(), b1_.begin(), b1_.end());
    params.insert(params.end(), w2_.begin(), w2_.end());
    params.insert(params.end(), b2_.begin(), b2_.end());
    opt.step(std::span<double>(params), grad, lr, t);
    auto it = params.begin();
    std::copy(it, it + w1_.size(), w1_.begin());
    it += w1_.size();
    std::copy(it, it + b1_.size(), b1_.begin());
    it += b1_.size();
    std::copy(it, it + w2_.size(), w2_.begin());
    it += w2_.size();
    std::copy(it, it + b2_.size(), b2_.begin());
  }

 private:
  std::size_t in_, hidden_, out_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

}  // namespace

ProbeReport train_layer_probe(const ProbeDataset& data, const ProbeOptions& options) {
  if (options.hidden_units == 0) throw ConfigError("probe: hidden_units must be positive");
  if (options.epochs == 0 || options.batch_size == 0) {
    throw ConfigError("probe: epochs and batch_size must be positive");
  }
  data.validate(options.folds);
  const std::size_t n = data.profiles.size();
  const std::size_t dim = data.profiles.front().size();
  const std::size_t classes = data.layers.size();
  const std::uint32_t folds = options.folds;

  // Stratified fold assignment.
  std::mt19937_64 rng(options.seed);
  std::vector<std::uint32_t> fold_of(n);
  for (std::uint32_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (data.labels[i] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t r = 0; r < members.size(); ++r) {
      fold_of[members[r]] = static_cast<std::uint32_t>(r % folds);
    }
  }

  ProbeReport report;
  report.samples = n;
  report.classes = static_cast<std::uint32_t>(classes);
  for (std::uint32_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? test_idx : train_idx).push_back(i);

    std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
    for (auto i : train_idx) {
      for (std::size_t c = 0; c < dim; ++c) mean[c] += data.profiles[i][c];
    }
    for (auto& m : mean) m /= static_cast<double>(train_idx.size());
    for (auto i : train_idx) {
      for (std::size_t c = 0; c < dim; ++c) {
        const double dv = data.profiles[i][c] - mean[c];
        sd[c] += dv * dv;
      }
    }
    for (auto& s : sd) {
      s = std::sqrt(s / static_cast<double>(train_idx.size()));
      if (s < 1e-12) s = 1.0;
    }
    std::vector<double> x(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dim; ++c) {
        x[i * dim + c] = (data.profiles[i][c] - mean[c]) / sd[c];
      }
    }

    std::mt19937_64 fold_rng(options.seed ^ (0x9e3779b97f4a7c15ULL * (f + 1)));
    Mlp net(dim, options.hidden_units, classes, fold_rng);
    Adam<double> opt(net.param_count());
    std::uint64_t t = 0;
    std::vector<std::size_t> order = train_idx;
    for (std::uint32_t e = 0; e < options.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), fold_rng);
      for (std::size_t b = 0; b < order.size(); b += options.batch_size) {
        const std::size_t end = std::min(order.size(), b + options.batch_size);
        std::vector<const double*> xs;
        std::vector<std::uint32_t> ys;
        for (std::size_t r = b; r < end; ++r) {
          xs.push_back(x.data() + order[r] * dim);
          ys.push_back(data.labels[order[r]]);
        }
        net.train_step(xs, ys, opt, options.learning_rate, ++t);
      }
    }
    std::size_t correct = 0;
    for (auto i : test_idx) {
      if (net.predict(x.data() + i * dim) == data.labels[i]) ++correct;
    }
    report.fold_accuracy.push_back(static_cast<double>(correct) /
                                   static_cast<double>(test_idx.size()));
  }
  const double k = static_cast<double>(report.fold_accuracy.size());
  report.mean_accuracy =
      std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(), 0.0) / k;
  double var = 0.0;
  for (double a : report.fold_accuracy) var += (a - report.mean_accuracy) * (a - report.mean_accuracy);
  report.std_accuracy = std::sqrt(var / (k - 1.0));
  return report;
}

nlohmann::json to_json(const ProbeReport& r, const ProbeOptions& o) {
  return {{"fold_accuracy", r.fold_accuracy},
          {"mean_accuracy", r.mean_accuracy},
          {"std_accuracy", r.std_accuracy},
          {"samples", r.samples},
          {"classes", r.classes},
          {"options",
           {{"hidden_units", o.hidden_units},
            {"folds", o.folds},
            {"epochs", o.epochs},
            {"batch_size", o.batch_size},
            {"learning_rate", o.learning_rate},
            {"seed", o.seed}}}};
}

}  // namespace latent_forge
