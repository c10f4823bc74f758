#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/cli.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/sae.hpp"
#include "../oracles/fixtures.hpp"

using namespace latent_forge;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Version 1 .npy file with a space-padded header, as numpy.save writes it.
template <typename T>
void write_npy(const std::filesystem::path& path, const char* descr, std::size_t rows,
               std::size_t cols, const std::vector<T>& values) {
  std::string header = std::string("{'descr': '") + descr + "', 'fortran_order': False, 'shape': (" +
                       std::to_string(rows) + ", " + std::to_string(cols) + "), }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::ofstream f(path, std::ios::binary);
  f.write("\x93NUMPY\x01\x00", 8);
  const std::uint16_t len = static_cast<std::uint16_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), 2);
  f << header;
  f.write(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(T));
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("ingest converts .npy tracks and validates ACTV corpora") {
  const auto dir = fixtures::temp_dir("ingest");
  const auto p = [&](const char* name) { return (dir / name).string(); };
  write_npy<float>(dir / "song_a.npy", "<f4", 2, 3, {1, 2, 3, 4, 5, 6});
  write_npy<double>(dir / "song_b.npy", "<f8", 1, 3, {0.5, -0.0, 7});
  const auto r = cli({"ingest", "--npy", p("song_a.npy"), p("song_b.npy"), "--output",
                      p("c.actv"), "--model-name", "musicgen-small", "--layer", "6"});
  REQUIRE(r.code == kExitOk);
  const auto c = read_corpus_file(p("c.actv"));
  REQUIRE(c.tracks.size() == 2);
  CHECK(c.tracks[0].track_id == "song_a");
  CHECK(c.tracks[1].data.data == std::vector<float>{0.5f, -0.0f, 7.0f});
  CHECK(c.manifest.layer_index == 6);
  CHECK(cli({"ingest", "--input", p("c.actv")}).code == kExitOk);

  write_npy<float>(dir / "wide.npy", "<f4", 1, 4, {1, 2, 3, 4});
  CHECK(cli({"ingest", "--npy", p("song_a.npy"), p("wide.npy"), "--output", p("d.actv")}).code ==
        kExitData);
  write_npy<std::int32_t>(dir / "ints.npy", "<i4", 1, 1, {1});
  CHECK(cli({"ingest", "--npy", p("ints.npy"), "--output", p("e.actv")}).code == kExitData);
  // Layer 7 is not an extractable layer of the small preset.
  CHECK(cli({"ingest", "--npy", p("song_a.npy"), "--output", p("f.actv"), "--model-name",
             "musicgen-small", "--layer", "7"})
            .code == kExitData);
  std::filesystem::remove_all(dir);
}

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"bogus"}).code == kExitUsage);
  CHECK(cli({"train", "--epsilon", "two"}).code == kExitUsage);
  CHECK(cli({"train", "--corpus", "/nonexistent.actv", "--output", "/tmp/x.ckpt"}).code ==
        kExitUsage);
  CHECK(cli({"--version"}).code == kExitOk);
}

TEST_CASE("end to end: synth, train, catalog, report, steer") {
  const auto dir = fixtures::temp_dir("cli");
  const auto p = [&](const char* name) { return (dir / name).string(); };
  REQUIRE(cli({"synth", "--d", "8", "--m-true", "6", "--k-true", "2", "--n-tracks", "30",
               "--steps-per-track", "10", "--seed", "4", "--output", p("c.actv")})
              .code == kExitOk);
  CHECK(std::filesystem::exists(p("c.manifest.json")));

  const auto trained = cli({"--log-json", "train", "--corpus", p("c.actv"), "--output",
                            p("m.ckpt"), "--epsilon", "2", "--k", "3", "--epochs", "3",
                            "--batch-size", "32", "--report", p("train.json")});
  REQUIRE(trained.code == kExitOk);
  CHECK(json::parse(std::ifstream(p("train.json"))).contains("final_loss"));
  // Structured log lines are JSON objects.
  std::istringstream lines(trained.err);
  for (std::string line; std::getline(lines, line);) CHECK(json::accept(line));

  REQUIRE(cli({"catalog", "--corpus", p("c.actv"), "--checkpoint", p("m.ckpt"), "--output",
               p("cat.jsonl"), "--profiles-out", p("prof.json")})
              .code == kExitOk);
  const auto cat = read_catalog_file(p("cat.jsonl"));
  CHECK(cat.summaries.size() == 16);

  const auto table = cli({"report", "--style", "table1", "--catalog", p("cat.jsonl")});
  CHECK(table.code == kExitOk);
  CHECK(!table.out.empty());

  std::uint32_t feature = 0;
  for (const auto& s : cat.summaries) {
    if (s.verdict == Verdict::kept) {
      feature = s.feature_id;
      break;
    }
  }
  const auto steer = cli({"steer-vec", "--checkpoint", p("m.ckpt"), "--catalog", p("cat.jsonl"),
                          "--corpus", p("c.actv"), "--feature", std::to_string(feature),
                          "--alpha", "0.5", "--output", p("v.json"), "--control-output",
                          p("ctrl.json"), "--control-seed", "3"});
  CHECK(steer.code == kExitOk);
  CHECK(json::parse(std::ifstream(p("ctrl.json")))["control"]["seed"] == 3);
  CHECK(cli({"steer-vec", "--checkpoint", p("m.ckpt"), "--catalog", p("cat.jsonl"), "--corpus",
             p("c.actv"), "--feature", "0", "--alpha", "1.5", "--output", p("v.json")})
            .code == kExitUsage);

  // A checkpoint for a different width is a data error.
  REQUIRE(cli({"synth", "--d", "6", "--m-true", "3", "--k-true", "1", "--n-tracks", "3",
               "--steps-per-track", "4", "--output", p("narrow.actv")})
              .code == kExitOk);
  const auto mismatch = cli({"catalog", "--corpus", p("narrow.actv"), "--checkpoint",
                             p("m.ckpt"), "--output", p("bad.jsonl")});
  CHECK(mismatch.code == kExitData);
  CHECK(mismatch.err.find("dimension") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config files supply defaults that flags override") {
  const auto dir = fixtures::temp_dir("cfg");
  const auto cfg = (dir / "cfg.json").string();
  // Required options can come from the config file too.
  const json file = {{"threads", 2},
                     {"train", {{"k", 5}, {"epochs", 7}, {"corpus", cfg},
                                {"output", (dir / "m.ckpt").string()}}}};
  std::ofstream(cfg) << file.dump();
  const auto shown = cli({"--config", cfg, "--print-config", "train", "--k", "6"});
  REQUIRE(shown.code == kExitOk);
  const auto j = json::parse(shown.out);
  CHECK(j["threads"] == 2);
  CHECK(j["train"]["k"] == 6);
  CHECK(j["train"]["epochs"] == 7);
  std::filesystem::remove_all(dir);
}

TEST_CASE("label and steer-eval run against stdio endpoints") {
  const auto dir = fixtures::temp_dir("cli_label");
  const auto p = [&](const char* name) { return (dir / name).string(); };
  REQUIRE(cli({"synth", "--d", "8", "--m-true", "4", "--k-true", "1", "--n-tracks", "20",
               "--steps-per-track", "4", "--seed", "1", "--output", p("c.actv")})
              .code == kExitOk);
  REQUIRE(cli({"train", "--corpus", p("c.actv"), "--output", p("m.ckpt"), "--k", "2",
               "--epochs", "2"})
              .code == kExitOk);
  REQUIRE(cli({"catalog", "--corpus", p("c.actv"), "--checkpoint", p("m.ckpt"), "--output",
               p("cat.jsonl"), "--theta-max", "1.0"})
              .code == kExitOk);
  const json endpoints = {
      {"proposers", {{{"name", "fake"}, {"command", {FAKE_ENDPOINT_PATH, "proposer", "bells", "Bells", "pad"}}}}},
      {"embedder", {{"name", "emb"}, {"command", {FAKE_ENDPOINT_PATH, "embedder", "12"}}}}};
  std::ofstream(p("endpoints.json")) << endpoints.dump();
  const auto labeled = cli({"label", "--catalog", p("cat.jsonl"), "--output", p("labels.jsonl"),
                            "--endpoints", p("endpoints.json"), "--audio-root", dir.string(),
                            "--thresholds", "0,0.5,1.1", "--coverage-out", p("cov.csv")});
  REQUIRE(labeled.code == kExitOk);
  std::ifstream in(p("labels.jsonl"));
  std::string line;
  std::size_t n = 0;
  int labeled_feature = -1;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    if (labeled_feature < 0) labeled_feature = j["feature_id"];
    CHECK(j["candidates"].size() == 2);  // "Bells" folds into "bells"
    ++n;
  }
  CHECK(n > 0);
  std::ifstream cov(p("cov.csv"));
  std::string header, row;
  std::getline(cov, header);
  CHECK(header == "threshold,covered,coverage");
  std::size_t rows = 0;
  while (std::getline(cov, row)) ++rows;
  CHECK(rows == 3);

  const json gens = json::array({{{"feature_id", labeled_feature}, {"steered", "/gen/s0.wav"},
                                  {"baseline", "/gen/b0.wav"}}});
  std::ofstream(p("gens.json")) << gens.dump();
  const auto eval = cli({"steer-eval", "--catalog", p("cat.jsonl"), "--generations",
                         p("gens.json"), "--audio-root", dir.string(), "--endpoints",
                         p("endpoints.json"), "--output", p("eval.json")});
  CHECK(eval.code == kExitOk);
  CHECK(json::parse(std::ifstream(p("eval.json")))["rollup"]["total"] == 1);
  std::filesystem::remove_all(dir);
}

}
