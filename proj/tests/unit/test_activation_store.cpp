#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "latent_forge/activation_store.hpp"
#include "../oracles/fixtures.hpp"

using namespace latent_forge;

namespace {

ActivationCorpus one_track(std::uint32_t d, std::size_t T, std::string id = "a") {
  ActivationCorpus c;
  c.manifest.model_name = "musicgen-small";
  c.manifest.d = d;
  TrackActivations t{std::move(id), Matrix(T, d)};
  for (std::size_t i = 0; i < t.data.data.size(); ++i) t.data.data[i] = 0.25f * float(i);
  c.tracks.push_back(std::move(t));
  return c;
}

std::string encode(const ActivationCorpus& c) {
  std::ostringstream out;
  write_corpus(c, out);
  return out.str();
}

}  // namespace

TEST_SUITE("activation_store") {

TEST_CASE("empty corpus is exactly the 20-byte header") {
  ActivationCorpus c;
  c.manifest.d = 4;
  const auto bytes = encode(c);
  CHECK(bytes.size() == 20);
  CHECK(encoded_size(c) == 20);
  CHECK(bytes.substr(0, 4) == "ACTV");
}

TEST_CASE("one track of 2x4 with a one-byte id is 59 bytes") {
  const auto c = one_track(4, 2);
  CHECK(encode(c).size() == 59);
  CHECK(encoded_size(c) == 59);
  CHECK(encoded_track_bytes(4, 1, 2) == 39);
}

TEST_CASE("round trip preserves bits including negative zero") {
  auto c = one_track(3, 5, "track-é");
  c.tracks[0].data.data[1] = -0.0f;
  std::istringstream in(encode(c));
  auto back = read_corpus(in);
  // The binary stream carries d and the track count; the rest lives in the sidecar.
  CHECK(back.manifest.d == 3);
  back.manifest = c.manifest;
  CHECK(bit_identical(c, back));
  CHECK(std::signbit(back.tracks[0].data.data[1]));
}

TEST_CASE("bad magic is rejected") {
  auto bytes = encode(one_track(2, 1));
  bytes[0] = 'X';
  std::istringstream in(bytes);
  CHECK_THROWS_WITH_AS(read_corpus(in), doctest::Contains("bad magic"), FormatError);
}

TEST_CASE("truncation names the offending track") {
  auto c = one_track(2, 3, "first");
  c.tracks.push_back({"second", Matrix(2, 2, 1.0f)});
  auto bytes = encode(c);
  bytes.resize(bytes.size() - 3);
  std::istringstream in(bytes);
  CHECK_THROWS_WITH_AS(read_corpus(in), doctest::Contains("track 1"), FormatError);
}

TEST_CASE("non-finite values are rejected on write and read") {
  auto c = one_track(2, 2);
  const auto good = encode(c);
  c.tracks[0].data.data[3] = std::numeric_limits<float>::quiet_NaN();
  std::ostringstream out;
  CHECK_THROWS_AS(write_corpus(c, out), DataError);

  auto bytes = good;
  const float nan = std::numeric_limits<float>::infinity();
  std::memcpy(bytes.data() + bytes.size() - 4, &nan, 4);
  std::istringstream in(bytes);
  CHECK_THROWS_WITH_AS(read_corpus(in), doctest::Contains("non-finite"), FormatError);
}

TEST_CASE("duplicate track ids and dimension mismatch are invariant violations") {
  auto c = one_track(2, 1, "x");
  c.tracks.push_back({"x", Matrix(1, 2)});
  CHECK_THROWS_AS(validate_corpus(c), DataError);
  auto d = one_track(2, 1, "x");
  d.tracks.push_back({"y", Matrix(1, 3)});
  CHECK_THROWS_AS(validate_corpus(d), DimensionError);
}

TEST_CASE("streaming in any batch size yields the rows in file order") {
  std::mt19937_64 rng(1);
  const auto c = fixtures::random_corpus(rng, 5, 7, 9);
  const auto bytes = encode(c);
  std::vector<float> flat;
  for (const auto& t : c.tracks) flat.insert(flat.end(), t.data.data.begin(), t.data.data.end());

  for (std::size_t batch : {1u, 3u, 64u}) {
    std::istringstream in(bytes);
    RowStream s(in, batch);
    std::vector<float> seen;
    std::size_t rows = 0;
    for (auto b = s.next_batch(); !b.empty(); b = s.next_batch()) {
      CHECK(b.size() <= batch);
      for (const auto& r : b) {
        CHECK(r.track_id == c.tracks[r.track_index].track_id);
        seen.insert(seen.end(), r.values.begin(), r.values.end());
        ++rows;
      }
    }
    CHECK(rows == c.total_rows());
    CHECK(bit_equal(seen, flat));
  }
  std::istringstream in(bytes);
  CHECK_THROWS_AS(RowStream(in, 0), ConfigError);
}

TEST_CASE("file row source matches the in-memory source across rewinds") {
  std::mt19937_64 rng(2);
  const auto c = fixtures::random_corpus(rng, 4, 5, 6);
  const auto dir = fixtures::temp_dir("rows");
  write_corpus_file(c, dir / "c.actv");
  CHECK(std::filesystem::exists(dir / "c.manifest.json"));
  FileRowSource file(dir / "c.actv", 2);
  CorpusRowSource mem(c);
  for (int epoch = 0; epoch < 2; ++epoch) {
    file.rewind();
    mem.rewind();
    std::vector<float> a, b;
    while (file.next_batch(3, a) > 0) {}
    while (mem.next_batch(3, b) > 0) {}
    CHECK(bit_equal(a, b));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest sidecar must agree with the binary") {
  const auto dir = fixtures::temp_dir("manifest");
  auto c = one_track(4, 2);
  write_corpus_file(c, dir / "c.actv");
  auto m = manifest_to_json(c.manifest);
  m["d"] = 8;
  std::ofstream(dir / "c.manifest.json") << m.dump();
  CHECK_THROWS_AS(read_corpus_file(dir / "c.actv"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("preset layer sets are enforced") {
  CorpusManifest m;
  m.model_name = "facebook/musicgen-small";
  m.d = 1024;
  m.layer_index = 6;
  CHECK_NOTHROW(check_manifest(m));
  m.layer_index = 7;
  CHECK_THROWS_AS(check_manifest(m), DataError);
  CHECK(find_preset("musicgen-large") != nullptr);
  CHECK(find_preset("jukebox") == nullptr);
}

TEST_CASE("track-set digest depends only on ordered ids") {
  auto a = one_track(2, 1, "x");
  auto b = one_track(3, 4, "x");
  CHECK(track_set_digest(a) == track_set_digest(b));
  b.tracks[0].track_id = "y";
  CHECK(track_set_digest(a) != track_set_digest(b));
}

}
