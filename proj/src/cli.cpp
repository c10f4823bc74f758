#include "latent_forge/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/analysis.hpp"
#include "latent_forge/endpoints.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/labeling.hpp"
#include "latent_forge/npy.hpp"
#include "latent_forge/sae.hpp"
#include "latent_forge/steering.hpp"
#include "latent_forge/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace latent_forge {
namespace {

// JSON config files for CLI11: top-level keys are global options, nested
// objects are subcommand sections, e.g. {"threads": 4, "train": {"k": 8}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  // Numbers and booleans keep their JSON type; everything else is a string.
  static json typed(const std::string& s) {
    json v = json::parse(s, nullptr, false);
    if (!v.is_discarded() && (v.is_number() || v.is_boolean())) return v;
    return s;
  }

  static json dump(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config" || name == "print-config") continue;
      if (opt->get_expected_max() == 0) {
        j[name] = opt->count() > 0;
      } else if (opt->count() > 0) {
        const auto& r = opt->results();
        if (opt->get_expected_max() > 1) {
          json arr = json::array();
          for (const auto& v : r) arr.push_back(typed(v));
          j[name] = std::move(arr);
        } else {
          j[name] = typed(r.back());
        }
      } else if (default_also) {
        const std::string def = opt->get_default_str();
        j[name] = def.empty() ? json(nullptr) : typed(def);
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = dump(sub, default_also);
    return j;
  }

  static void flatten(const json& j, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        flatten(*it, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      auto scalar = [&](const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
        if (v.is_number()) return v.dump();
        throw CLI::ConversionError("config key '" + it.key() + "' has an unsupported value");
      };
      if (it->is_null()) continue;
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      items.push_back(std::move(item));
    }
  }
};

class Log {
 public:
  Log(std::ostream& err, bool json_lines) : err_(err), json_(json_lines) {}

  void info(std::string_view msg, json fields = json::object()) { emit("info", msg, std::move(fields)); }
  void warn(std::string_view msg, json fields = json::object()) { emit("warn", msg, std::move(fields)); }
  void error(std::string_view msg) { emit("error", msg, json::object()); }

 private:
  void emit(std::string_view level, std::string_view msg, json fields) {
    if (json_) {
      fields["level"] = level;
      fields["msg"] = msg;
      err_ << fields.dump() << '\n';
      return;
    }
    err_ << "latent-forge: ";
    if (level != "info") err_ << level << ": ";
    err_ << msg;
    for (auto it = fields.begin(); it != fields.end(); ++it) {
      err_ << ' ' << it.key() << '=' << (it->is_string() ? it->get<std::string>() : it->dump());
    }
    err_ << '\n';
  }

  std::ostream& err_;
  bool json_;
};

struct Context {
  std::ostream& out;
  Log log;
  unsigned threads;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  return f;
}

void write_json_file(const fs::path& path, const json& j) {
  auto f = open_output(path);
  f << j.dump(2) << '\n';
  if (!f) throw DataError("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const CLI::Validator kOutputPath(
    [](std::string& s) -> std::string {
      const fs::path parent = fs::path(s).parent_path();
      if (!parent.empty() && !fs::is_directory(parent)) {
        return "directory does not exist: " + parent.string();
      }
      return {};
    },
    "OUT", "OutputPath");

EndpointRegistry load_registry(const std::optional<fs::path>& file) {
  if (file) return endpoint_registry_from_json(read_json_file(*file));
  return endpoints_from_environment();
}

// --- ingest ---

struct IngestArgs {
  std::optional<fs::path> input;
  std::vector<fs::path> npy;
  std::optional<fs::path> output;
  std::string model_name;
  std::uint32_t layer = 0;
  std::string notes;
};

void run_ingest(const IngestArgs& a, Context& ctx) {
  ActivationCorpus corpus;
  if (!a.npy.empty()) {
    if (!a.output) throw ConfigError("ingest: --npy requires --output");
    corpus.manifest.model_name = a.model_name;
    corpus.manifest.layer_index = a.layer;
    corpus.manifest.source_notes = a.notes;
    for (const auto& p : a.npy) {
      Matrix m = read_npy_matrix(p);
      if (corpus.tracks.empty()) corpus.manifest.d = static_cast<std::uint32_t>(m.cols);
      if (m.cols != corpus.manifest.d) {
        throw DimensionError("ingest: " + p.string() + " has d=" + std::to_string(m.cols) +
                             ", expected " + std::to_string(corpus.manifest.d));
      }
      corpus.tracks.push_back({p.stem().string(), std::move(m)});
    }
    corpus.manifest.track_count = corpus.tracks.size();
    validate_corpus(corpus);
  } else {
    corpus = read_corpus_file(*a.input);
    if (!a.model_name.empty()) corpus.manifest.model_name = a.model_name;
    if (!a.notes.empty()) corpus.manifest.source_notes = a.notes;
  }
  const auto warnings = check_manifest(corpus.manifest);
  for (const auto& w : warnings) ctx.log.warn(w);
  std::uint64_t bytes = encoded_size(corpus);
  if (a.output) {
    bytes = write_corpus_file(corpus, *a.output);
    ctx.log.info("wrote corpus", {{"path", a.output->string()}, {"bytes", bytes}});
  }
  ctx.out << json{{"model_name", corpus.manifest.model_name},
                  {"layer_index", corpus.manifest.layer_index},
                  {"d", corpus.dim()},
                  {"tracks", corpus.tracks.size()},
                  {"rows", corpus.total_rows()},
                  {"bytes", bytes},
                  {"track_digest", track_set_digest(corpus)},
                  {"warnings", warnings}}
                 .dump(2)
          << '\n';
}

// --- synth ---

struct SynthArgs {
  PlantedSpec spec;
  fs::path output;
  std::optional<fs::path> truth;
  std::uint32_t layer = 0;
  std::string model_name = "synthetic";
};

void run_synth(const SynthArgs& a, Context& ctx) {
  a.spec.validate();
  auto [corpus, truth] = generate_planted(a.spec);
  corpus.manifest.layer_index = a.layer;
  corpus.manifest.model_name = a.model_name;
  const auto bytes = write_corpus_file(corpus, a.output);
  fs::path truth_path = a.truth ? *a.truth : fs::path(a.output).replace_extension(".planted");
  write_ground_truth(truth, truth_path);
  fs::path spec_path = fs::path(a.output).replace_extension(".spec.json");
  write_json_file(spec_path, to_json(a.spec));
  ctx.log.info("generated planted corpus",
               {{"rows", corpus.total_rows()}, {"noise_floor", a.spec.noise_floor()}});
  ctx.out << json{{"corpus", a.output.string()},
                  {"bytes", bytes},
                  {"ground_truth", truth_path.string()},
                  {"spec", spec_path.string()},
                  {"rows", corpus.total_rows()},
                  {"noise_floor", a.spec.noise_floor()}}
                 .dump(2)
          << '\n';
}

// --- train ---

struct TrainArgs {
  fs::path corpus;
  fs::path output;
  SaeConfig config;
  std::optional<std::uint32_t> expect_d;
  std::optional<fs::path> report;
  bool stream = false;
};

void run_train(TrainArgs a, Context& ctx) {
  std::unique_ptr<RowSource> source;
  ActivationCorpus corpus;
  if (a.stream) {
    source = std::make_unique<FileRowSource>(a.corpus);
    const auto sidecar = manifest_path_for(a.corpus);
    if (fs::exists(sidecar)) {
      for (const auto& w : check_manifest(manifest_from_json(read_json_file(sidecar)))) {
        ctx.log.warn(w);
      }
    }
  } else {
    corpus = read_corpus_file(a.corpus);
    for (const auto& w : check_manifest(corpus.manifest)) ctx.log.warn(w);
    source = std::make_unique<CorpusRowSource>(corpus);
  }
  const std::uint32_t d = source->dim();
  if (a.expect_d && *a.expect_d != d) {
    throw DimensionError("train: corpus has d=" + std::to_string(d) + " but --d is " +
                         std::to_string(*a.expect_d));
  }
  a.config.d = d;
  a.config.validate();
  ctx.log.info("training", {{"d", d}, {"latent_dim", a.config.latent_dim()}, {"k", a.config.k},
                            {"threads", ctx.threads}});
  auto result = train(a.config, *source, ctx.threads, [&](std::uint32_t epoch, double loss) {
    ctx.log.info("epoch", {{"epoch", epoch}, {"loss", loss}});
  });
  save_checkpoint_file(result.model, a.output);
  const json report = to_json(result.report);
  if (a.report) write_json_file(*a.report, report);
  ctx.out << json{{"checkpoint", a.output.string()},
                  {"checkpoint_digest", checkpoint_digest(result.model)},
                  {"final_loss", result.report.final_loss},
                  {"final_loss_per_dim", result.report.final_loss_per_dim},
                  {"steps", result.report.steps},
                  {"dead_features", result.report.dead_features}}
                 .dump(2)
          << '\n';
}

// --- catalog ---

struct CatalogArgs {
  fs::path corpus;
  fs::path checkpoint;
  fs::path output;
  FilterPolicy policy;
  std::optional<fs::path> profiles_out;
};

void run_catalog(const CatalogArgs& a, Context& ctx) {
  a.policy.validate();
  const SaeModel model = load_checkpoint_file(a.checkpoint);
  const ActivationCorpus corpus = read_corpus_file(a.corpus);
  require_input_dim(model, corpus.dim());
  const TrackStats stats = compute_track_stats(model, corpus, a.policy, ctx.threads);
  const FeatureCatalog catalog = summarize_and_filter(
      stats, a.policy, make_identity(model, corpus.manifest), track_set_digest(corpus));
  write_catalog_file(catalog, a.output);
  if (a.profiles_out) write_json_file(*a.profiles_out, to_json(kept_feature_profiles(stats, catalog)));
  const auto c = catalog.counts();
  ctx.out << json{{"catalog", a.output.string()},
                  {"sae", catalog.sae.label()},
                  {"kept", c.kept},
                  {"inactive", c.inactive},
                  {"ubiquitous", c.ubiquitous},
                  {"obscure", c.obscure},
                  {"total", c.total()}}
                 .dump(2)
          << '\n';
}

// --- label ---

struct LabelArgs {
  fs::path catalog;
  fs::path output;
  fs::path audio_root;
  std::vector<std::uint32_t> features;
  std::uint32_t top_n_tags = 3;
  unsigned max_in_flight = 4;
  std::optional<fs::path> endpoints;
  std::vector<double> thresholds;
  std::optional<fs::path> coverage_out;
};

void run_label(const LabelArgs& a, Context& ctx) {
  const FeatureCatalog catalog = read_catalog_file(a.catalog);
  const EndpointRegistry registry = load_registry(a.endpoints);
  if (registry.proposers.empty()) throw ConfigError("label: no proposer endpoints configured");
  if (!registry.embedder) throw ConfigError("label: no embedder endpoint configured");

  std::vector<std::unique_ptr<JsonEndpoint>> opened;
  std::vector<Proposer> proposers;
  for (const auto& spec : registry.proposers) {
    opened.push_back(open_endpoint(spec));
    proposers.push_back({spec.name, label_source_from_string(spec.source), opened.back().get()});
  }
  auto embed_endpoint = open_endpoint(*registry.embedder);
  Embedder embedder(*embed_endpoint);

  std::vector<std::uint32_t> ids = a.features;
  if (ids.empty()) {
    for (const auto& s : catalog.summaries) {
      if (s.verdict == Verdict::kept) ids.push_back(s.feature_id);
    }
  }
  CollectOptions opts{a.audio_root, a.top_n_tags, a.max_in_flight};
  auto out = open_output(a.output);
  std::vector<LabeledFeature> labeled;
  for (auto id : ids) {
    const FeatureSummary& feature = catalog.feature(id);
    auto collected = collect_candidates(feature, proposers, opts);
    for (const auto& w : collected.warnings) ctx.log.warn(w, {{"feature_id", id}});
    if (collected.candidates.empty()) {
      ctx.log.warn("no candidates", {{"feature_id", id}});
      continue;
    }
    std::vector<std::string> texts;
    for (const auto& c : collected.candidates) texts.push_back(c.text);
    const auto paths =
        proposer_request(feature, opts).at("example_audio_paths").get<std::vector<std::string>>();
    const auto text_emb = embedder.embed_texts(texts);
    const auto audio_emb = embedder.embed_audio(paths);
    LabeledFeature lf = rank_labels(id, collected.candidates, audio_emb, text_emb);
    out << to_json(lf).dump() << '\n';
    ctx.log.info("labeled", {{"feature_id", id},
                             {"label", lf.best_label().label.text},
                             {"score", lf.max_score}});
    labeled.push_back(std::move(lf));
  }
  if (!out) throw DataError("write failed: " + a.output.string());

  if (!a.thresholds.empty() && !labeled.empty()) {
    const auto rows = score_threshold_report(labeled, a.thresholds);
    std::ostringstream csv;
    csv << "threshold,covered,coverage\n";
    for (const auto& r : rows) csv << r.threshold << ',' << r.covered << ',' << r.coverage << '\n';
    if (a.coverage_out) {
      auto f = open_output(*a.coverage_out);
      f << csv.str();
    } else {
      ctx.out << csv.str();
    }
  }
}

// --- coactivate ---

struct CoactivateArgs {
  std::vector<fs::path> catalogs;
  fs::path output;
  std::optional<fs::path> summary;
};

void run_coactivate(const CoactivateArgs& a, Context& ctx) {
  std::vector<FeatureCatalog> catalogs;
  for (const auto& p : a.catalogs) catalogs.push_back(read_catalog_file(p));
  const auto pairs = coactivation_matrix(catalogs, ctx.threads);
  {
    auto f = open_output(a.output);
    write_coactivation_csv(pairs, catalogs, f);
  }
  const auto summary = coactivation_summary(pairs, catalogs);
  if (a.summary) write_json_file(*a.summary, to_json(summary));
  ctx.out << json{{"pairs", pairs.size()}, {"csv", a.output.string()}}.dump(2) << '\n';
}

// --- probe ---

struct ProbeArgs {
  std::vector<fs::path> profiles;
  ProbeOptions options;
  std::optional<fs::path> output;
  bool shuffle_labels = false;
};

void run_probe(const ProbeArgs& a, Context& ctx) {
  std::vector<FeatureProfiles> inputs;
  for (const auto& p : a.profiles) inputs.push_back(feature_profiles_from_json(read_json_file(p)));
  ProbeDataset data = build_probe_dataset(inputs);
  if (a.shuffle_labels) {
    std::mt19937_64 rng(a.options.seed ^ 0x5bd1e995ULL);
    std::shuffle(data.labels.begin(), data.labels.end(), rng);
  }
  const ProbeReport report = train_layer_probe(data, a.options);
  json j = to_json(report, a.options);
  j["layers"] = data.layers;
  j["shuffled_labels"] = a.shuffle_labels;
  if (a.output) write_json_file(*a.output, j);
  ctx.log.info("probe", {{"mean_accuracy", report.mean_accuracy},
                         {"std_accuracy", report.std_accuracy}});
  ctx.out << j.dump(2) << '\n';
}

// --- steer-vec ---

struct SteerVecArgs {
  fs::path checkpoint;
  fs::path catalog;
  fs::path corpus;
  std::uint32_t feature = 0;
  float alpha = 1.0f;
  fs::path output;
  std::optional<fs::path> control_output;
  std::uint64_t control_seed = 0;
};

void run_steer_vec(const SteerVecArgs& a, Context& ctx) {
  const SaeModel model = load_checkpoint_file(a.checkpoint);
  const FeatureCatalog catalog = read_catalog_file(a.catalog);
  const ActivationCorpus corpus = read_corpus_file(a.corpus);
  const SteeringVector vec = build_steering_vector(model, catalog, corpus, a.feature, a.alpha);
  write_steering_vector(vec, a.output);
  json summary{{"vector", a.output.string()},
               {"feature_id", vec.feature_id},
               {"alpha", vec.alpha},
               {"beta", vec.beta},
               {"sae", vec.sae.label()}};
  if (a.control_output) {
    write_steering_vector(random_control_vector(vec, a.control_seed), *a.control_output);
    summary["control"] = a.control_output->string();
  }
  ctx.out << summary.dump(2) << '\n';
}

// --- steer-eval ---

struct SteerEvalArgs {
  fs::path catalog;
  fs::path generations;
  fs::path audio_root;
  std::optional<fs::path> endpoints;
  fs::path output;
};

void run_steer_eval(const SteerEvalArgs& a, Context& ctx) {
  const FeatureCatalog catalog = read_catalog_file(a.catalog);
  json gens = read_json_file(a.generations);
  if (gens.is_object()) gens = gens.at("generations");
  if (!gens.is_array()) throw FormatError(a.generations.string() + ": expected a list of generations");
  const EndpointRegistry registry = load_registry(a.endpoints);
  if (!registry.embedder) throw ConfigError("steer-eval: no embedder endpoint configured");
  auto endpoint = open_endpoint(*registry.embedder);
  Embedder embedder(*endpoint);
  const CollectOptions opts{a.audio_root, 0, 1};

  std::vector<SteeringEvaluation> evals;
  for (const auto& g : gens) {
    const auto id = g.at("feature_id").get<std::uint32_t>();
    const FeatureSummary& feature = catalog.feature(id);
    const auto paths =
        proposer_request(feature, opts).at("example_audio_paths").get<std::vector<std::string>>();
    const auto examples = embedder.embed_audio(paths);
    const std::vector<std::string> generated{g.at("steered").get<std::string>(),
                                             g.at("baseline").get<std::string>()};
    const auto gen_emb = embedder.embed_audio(generated);
    evals.push_back(evaluate_steering(id, examples, gen_emb[0], gen_emb[1]));
  }
  const SteeringRollup r = rollup(catalog.sae.label(), evals);
  json j{{"sae", to_json(catalog.sae)},
         {"rollup", {{"improved", r.improved}, {"total", r.total}, {"formatted", r.formatted()}}},
         {"evaluations", json::array()}};
  for (const auto& e : evals) j["evaluations"].push_back(to_json(e));
  write_json_file(a.output, j);
  ctx.out << json{{"sae", r.sae_label}, {"steering_improvement", r.formatted()}}.dump(2) << '\n';
}

// --- report ---

struct ReportArgs {
  std::string style;
  std::vector<fs::path> catalogs;
  std::vector<fs::path> evaluations;
  std::optional<fs::path> output;
  std::optional<fs::path> plot_data;
};

void run_report(const ReportArgs& a, Context& ctx) {
  std::ostringstream csv;
  json plot;
  if (a.style == "table1" || a.style == "fig6") {
    if (a.catalogs.empty()) throw ConfigError("report: --style " + a.style + " needs --catalog");
    std::vector<FeatureCatalog> catalogs;
    for (const auto& p : a.catalogs) catalogs.push_back(read_catalog_file(p));
    if (a.style == "table1") {
      const auto rows = feature_count_table(catalogs);
      write_feature_count_csv(rows, csv);
      plot = json::array();
      for (const auto& r : rows) {
        plot.push_back({{"model", r.model_name}, {"layer", r.layer_index}, {"epsilon", r.epsilon},
                        {"k", r.k}, {"kept", r.counts.kept}});
      }
    } else {
      csv << "sae,feature_id,rate,mean_strength,verdict\n";
      for (const auto& c : catalogs) {
        for (const auto& p : prevalence_report(c).points) {
          csv << c.sae.label() << ',' << p.feature_id << ',' << p.rate << ',' << p.mean_strength
              << ',' << to_string(p.verdict) << '\n';
        }
      }
      plot = prevalence_plot_data(catalogs);
    }
  } else {
    if (a.evaluations.empty()) throw ConfigError("report: --style table2 needs --evaluations");
    struct Row {
      SaeIdentity sae;
      SteeringRollup r;
    };
    std::vector<Row> rows;
    for (const auto& p : a.evaluations) {
      const json j = read_json_file(p);
      Row row{sae_identity_from_json(j.at("sae")), {}};
      std::vector<SteeringEvaluation> evals;
      for (const auto& e : j.at("evaluations")) evals.push_back(steering_evaluation_from_json(e));
      row.r = rollup(row.sae.label(), evals);
      rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
      return std::tie(x.sae.model_name, x.sae.epsilon, x.sae.k, x.sae.layer_index) <
             std::tie(y.sae.model_name, y.sae.epsilon, y.sae.k, y.sae.layer_index);
    });
    csv << "model,epsilon,k,layer,improved,total,steering_improvement\n";
    plot = json::array();
    for (const auto& row : rows) {
      csv << row.sae.model_name << ',' << row.sae.epsilon << ',' << row.sae.k << ','
          << row.sae.layer_index << ',' << row.r.improved << ',' << row.r.total << ",\""
          << row.r.formatted() << "\"\n";
      plot.push_back({{"sae", row.sae.label()}, {"improved", row.r.improved},
                      {"total", row.r.total}, {"fraction", row.r.fraction()}});
    }
  }
  if (a.output) {
    auto f = open_output(*a.output);
    f << csv.str();
  } else {
    ctx.out << csv.str();
  }
  if (a.plot_data) write_json_file(*a.plot_data, plot);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitUsage;
  return kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse-autoencoder feature discovery for music-model activations",
               "latent-forge"};
  app.option_defaults()->always_capture_default();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (flags override it)");
  app.set_version_flag("--version", "latent-forge 0.1.0");
  app.require_subcommand(1);

  bool print_config = false;
  bool log_json = false;
  unsigned threads = 0;
  app.add_flag("--print-config", print_config, "Print the resolved configuration as JSON and exit")
      ->configurable(false);
  app.add_flag("--log-json", log_json, "Structured JSON log lines on stderr");
  app.add_option("--threads", threads, "Worker threads (0: hardware concurrency)");

  const CLI::Validator existing = CLI::ExistingFile;

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Validate an ACTV corpus or convert .npy arrays");
  c_ingest->fallthrough();
  auto* in_opt = c_ingest->add_option("--input", ingest.input, "ACTV corpus to validate")
                     ->check(existing);
  auto* npy_opt = c_ingest->add_option("--npy", ingest.npy, "(T, d) .npy files, one per track")
                      ->check(existing);
  in_opt->excludes(npy_opt);
  c_ingest->add_option("--output", ingest.output, "Write the (converted) corpus here")
      ->check(kOutputPath);
  c_ingest->add_option("--model-name", ingest.model_name, "Manifest model name");
  c_ingest->add_option("--layer", ingest.layer, "Manifest layer index");
  c_ingest->add_option("--notes", ingest.notes, "Manifest source notes");
  c_ingest->callback([&] {
    if (!ingest.input && ingest.npy.empty()) {
      throw CLI::ValidationError("ingest", "one of --input or --npy is required");
    }
  });

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a planted-dictionary corpus");
  c_synth->fallthrough();
  c_synth->add_option("--d", synth.spec.d, "Activation dimensionality");
  c_synth->add_option("--m-true", synth.spec.m_true, "Planted atoms");
  c_synth->add_option("--k-true", synth.spec.k_true, "Active atoms per row");
  c_synth->add_option("--n-tracks", synth.spec.n_tracks, "Tracks");
  c_synth->add_option("--steps-per-track", synth.spec.steps_per_track, "Rows per track");
  c_synth->add_option("--amplitude-low", synth.spec.amplitude_low, "Coefficient lower bound");
  c_synth->add_option("--amplitude-high", synth.spec.amplitude_high, "Coefficient upper bound");
  c_synth->add_option("--noise-sigma", synth.spec.noise_sigma, "Gaussian noise sigma");
  c_synth->add_option("--prevalence", synth.spec.prevalence,
                      "Per-atom track fraction (comma separated)")
      ->delimiter(',');
  c_synth->add_option("--max-coherence", synth.spec.max_coherence, "Max pairwise |cos| of atoms");
  c_synth->add_option("--max-retries", synth.spec.max_retries, "Rejection-sampling budget per atom");
  c_synth->add_option("--seed", synth.spec.seed, "Seed");
  c_synth->add_option("--layer", synth.layer, "Manifest layer index");
  c_synth->add_option("--model-name", synth.model_name, "Manifest model name");
  c_synth->add_option("--output", synth.output, "Corpus path (.actv)")->required()->check(kOutputPath);
  c_synth->add_option("--truth", synth.truth, "Ground-truth sidecar path")->check(kOutputPath);

  TrainArgs trn;
  auto* c_train = app.add_subcommand("train", "Train a k-sparse autoencoder");
  c_train->fallthrough();
  c_train->add_option("--corpus", trn.corpus, "Training corpus")->required()->check(existing);
  c_train->add_option("--output", trn.output, "Checkpoint path")->required()->check(kOutputPath);
  c_train->add_option("--epsilon", trn.config.epsilon, "Expansion factor");
  c_train->add_option("--k", trn.config.k, "Active latents per row");
  c_train->add_option("--learning-rate", trn.config.learning_rate, "Adam step size");
  c_train->add_option("--batch-size", trn.config.batch_size, "Rows per step");
  c_train->add_option("--epochs", trn.config.epochs, "Passes over the corpus");
  c_train->add_option("--max-steps", trn.config.max_steps, "Stop after this many steps (0: no cap)");
  c_train->add_option("--seed", trn.config.seed, "Initialization seed");
  c_train->add_option("--dead-feature-window", trn.config.dead_feature_window,
                      "Steps without activation before a latent counts as dead");
  c_train->add_option("--divergence-ratio", trn.config.divergence_ratio,
                      "Abort when batch loss exceeds this multiple of the initial signal power");
  c_train->add_option("--d", trn.expect_d, "Expected input dimensionality");
  c_train->add_option("--report", trn.report, "Training report JSON")->check(kOutputPath);
  c_train->add_flag("--stream", trn.stream, "Stream rows from disk instead of loading the corpus");

  CatalogArgs cat;
  auto* c_catalog = app.add_subcommand("catalog", "Compute per-feature statistics and filter");
  c_catalog->fallthrough();
  c_catalog->add_option("--corpus", cat.corpus, "Validation corpus")->required()->check(existing);
  c_catalog->add_option("--checkpoint", cat.checkpoint, "SAE checkpoint")->required()->check(existing);
  c_catalog->add_option("--output", cat.output, "Catalog JSONL")->required()->check(kOutputPath);
  c_catalog->add_option("--tau", cat.policy.tau, "Activation threshold for delta");
  c_catalog->add_option("--theta-max", cat.policy.theta_max, "Ubiquity bound on r");
  c_catalog->add_option("--theta-min", cat.policy.theta_min, "Obscurity bound on r");
  c_catalog->add_option("--top-n", cat.policy.top_n, "Top examples per feature");
  c_catalog->add_option("--profiles-out", cat.profiles_out, "Kept-feature profiles JSON for probe")
      ->check(kOutputPath);

  LabelArgs lab;
  auto* c_label = app.add_subcommand("label", "Propose and rank labels via external endpoints");
  c_label->fallthrough();
  c_label->add_option("--catalog", lab.catalog, "Catalog JSONL")->required()->check(existing);
  c_label->add_option("--output", lab.output, "Labeled features JSONL")->required()->check(kOutputPath);
  c_label->add_option("--audio-root", lab.audio_root, "Directory holding track audio")
      ->check(CLI::ExistingDirectory);
  c_label->add_option("--features", lab.features, "Feature ids (default: all kept)")->delimiter(',');
  c_label->add_option("--top-n-tags", lab.top_n_tags, "Tags requested per proposer");
  c_label->add_option("--max-in-flight", lab.max_in_flight, "Concurrent proposer calls")
      ->check(CLI::PositiveNumber);
  c_label->add_option("--endpoints", lab.endpoints,
                      "Endpoint registry JSON (default: $LATENT_FORGE_ENDPOINTS)")
      ->check(existing);
  c_label->add_option("--thresholds", lab.thresholds, "Coverage thresholds")->delimiter(',');
  c_label->add_option("--coverage-out", lab.coverage_out, "Coverage CSV")->check(kOutputPath);

  CoactivateArgs co;
  auto* c_co = app.add_subcommand("coactivate", "Top-example overlap between kept features");
  c_co->fallthrough();
  c_co->add_option("--catalog", co.catalogs, "Catalog JSONL (repeatable)")
      ->required()
      ->check(existing);
  c_co->add_option("--output", co.output, "Pairs CSV")->required()->check(kOutputPath);
  c_co->add_option("--summary", co.summary, "Summary JSON")->check(kOutputPath);

  ProbeArgs pr;
  auto* c_probe = app.add_subcommand("probe", "Layer-of-origin probe on feature profiles");
  c_probe->fallthrough();
  c_probe->add_option("--profiles", pr.profiles, "Profiles JSON (repeatable, one per SAE)")
      ->required()
      ->check(existing);
  c_probe->add_option("--hidden-units", pr.options.hidden_units, "Hidden layer width");
  c_probe->add_option("--folds", pr.options.folds, "Cross-validation folds");
  c_probe->add_option("--epochs", pr.options.epochs, "Epochs per fold");
  c_probe->add_option("--batch-size", pr.options.batch_size, "Mini-batch size");
  c_probe->add_option("--learning-rate", pr.options.learning_rate, "Adam step size");
  c_probe->add_option("--seed", pr.options.seed, "Seed");
  c_probe->add_flag("--shuffle-labels", pr.shuffle_labels, "Permutation baseline");
  c_probe->add_option("--output", pr.output, "Report JSON")->check(kOutputPath);

  SteerVecArgs sv;
  auto* c_sv = app.add_subcommand("steer-vec", "Export a steering vector for one feature");
  c_sv->fallthrough();
  c_sv->add_option("--checkpoint", sv.checkpoint, "SAE checkpoint")->required()->check(existing);
  c_sv->add_option("--catalog", sv.catalog, "Catalog JSONL")->required()->check(existing);
  c_sv->add_option("--corpus", sv.corpus, "Validation corpus")->required()->check(existing);
  c_sv->add_option("--feature", sv.feature, "Feature id")->required();
  c_sv->add_option("--alpha", sv.alpha, "Steering strength in [0, 1]")->check(CLI::Range(0.0, 1.0));
  c_sv->add_option("--output", sv.output, "Steering vector JSON")->required()->check(kOutputPath);
  auto* ctl = c_sv->add_option("--control-output", sv.control_output,
                               "Also write a random-direction control")
                  ->check(kOutputPath);
  c_sv->add_option("--control-seed", sv.control_seed, "Seed of the control direction")->needs(ctl);

  SteerEvalArgs se;
  auto* c_se = app.add_subcommand("steer-eval", "Score steered vs baseline generations");
  c_se->fallthrough();
  c_se->add_option("--catalog", se.catalog, "Catalog JSONL")->required()->check(existing);
  c_se->add_option("--generations", se.generations,
                   "JSON list of {feature_id, steered, baseline} audio paths")
      ->required()
      ->check(existing);
  c_se->add_option("--audio-root", se.audio_root, "Directory holding track audio")
      ->check(CLI::ExistingDirectory);
  c_se->add_option("--endpoints", se.endpoints, "Endpoint registry JSON")->check(existing);
  c_se->add_option("--output", se.output, "Evaluation JSON")->required()->check(kOutputPath);

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Summary tables and plot data");
  c_rep->fallthrough();
  c_rep->add_option("--style", rep.style, "table1 | table2 | fig6")
      ->required()
      ->check(CLI::IsMember({"table1", "table2", "fig6"}));
  auto* rc = c_rep->add_option("--catalog", rep.catalogs, "Catalog JSONL (repeatable)")->check(existing);
  auto* re = c_rep->add_option("--evaluations", rep.evaluations, "steer-eval output (repeatable)")
                 ->check(existing);
  rc->excludes(re);
  c_rep->add_option("--output", rep.output, "CSV path (default: stdout)")->check(kOutputPath);
  c_rep->add_option("--plot-data", rep.plot_data, "Plot data JSON")->check(kOutputPath);

  std::vector<std::string> argv_store{"latent-forge"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    if (app.get_subcommands().empty()) err << '\n' << app.help();
    return kExitUsage;
  }

  if (print_config) {
    out << app.config_to_str(true, false);
    return kExitOk;
  }

  Context ctx{out, Log(err, log_json),
              threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads};
  try {
    if (c_ingest->parsed()) run_ingest(ingest, ctx);
    else if (c_synth->parsed()) run_synth(synth, ctx);
    else if (c_train->parsed()) run_train(trn, ctx);
    else if (c_catalog->parsed()) run_catalog(cat, ctx);
    else if (c_label->parsed()) run_label(lab, ctx);
    else if (c_co->parsed()) run_coactivate(co, ctx);
    else if (c_probe->parsed()) run_probe(pr, ctx);
    else if (c_sv->parsed()) run_steer_vec(sv, ctx);
    else if (c_se->parsed()) run_steer_eval(se, ctx);
    else if (c_rep->parsed()) run_report(rep, ctx);
  } catch (const std::exception& e) {
    ctx.log.error(e.what());
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace latent_forge
