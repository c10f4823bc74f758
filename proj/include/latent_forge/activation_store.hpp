#pragma once

// ACTV activation corpora: one file per (model, layer), little-endian.
//
//   bytes 0-3    magic "ACTV"
//   bytes 4-7    u32 version (1)
//   bytes 8-11   u32 d
//   bytes 12-19  u64 track_count
//   per track    u16 id_len, id bytes (UTF-8), u32 T, T*d float32 row-major
//
// The manifest lives next to the binary as <basename>.manifest.json.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_forge/common.hpp"

namespace latent_forge {

inline constexpr char kActvMagic[4] = {'A', 'C', 'T', 'V'};
inline constexpr std::uint32_t kActvVersion = 1;
inline constexpr std::uint64_t kActvHeaderBytes = 20;
inline constexpr std::size_t kMaxTrackIdBytes = 65535;

struct CorpusManifest {
  std::string model_name;
  std::uint32_t layer_index = 0;
  std::uint32_t d = 0;
  std::uint64_t track_count = 0;
  std::string source_notes;

  bool operator==(const CorpusManifest&) const = default;
};

struct TrackActivations {
  std::string track_id;
  Matrix data;  // T x d

  std::size_t steps() const { return data.rows; }
  bool operator==(const TrackActivations&) const = default;
};

struct ActivationCorpus {
  CorpusManifest manifest;
  std::vector<TrackActivations> tracks;

  std::uint32_t dim() const { return manifest.d; }
  std::size_t total_rows() const;
};

// Bitwise comparison, including float payloads.
bool bit_identical(const ActivationCorpus& a, const ActivationCorpus& b);

// Known model presets and their extractable layer sets.
struct LayerPreset {
  std::string_view name;
  std::uint32_t d;
  std::uint32_t depth;
  std::vector<std::uint32_t> layers;
};
const std::vector<LayerPreset>& layer_presets();
// Matches names such as "musicgen-small" or "facebook/musicgen-large".
const LayerPreset* find_preset(std::string_view model_name);

// Throws DataError when a preset's layer set excludes layer_index; returns
// non-fatal warnings (unexpected d).
std::vector<std::string> check_manifest(const CorpusManifest& manifest);

// Throws DataError on any type-invariant violation. manifest.track_count is
// informational; writers always emit tracks.size().
void validate_corpus(const ActivationCorpus& corpus);

// Exact encoded size for the given layout.
std::uint64_t encoded_track_bytes(std::uint32_t d, std::size_t id_bytes,
                                  std::uint64_t steps);
std::uint64_t encoded_size(const ActivationCorpus& corpus);

// Writes the ACTV stream only; returns the byte count.
std::uint64_t write_corpus(const ActivationCorpus& corpus, std::ostream& out);
// Reads an ACTV stream; manifest fields other than d/track_count are empty.
ActivationCorpus read_corpus(std::istream& in);

std::filesystem::path manifest_path_for(const std::filesystem::path& actv);
nlohmann::json manifest_to_json(const CorpusManifest& m);
CorpusManifest manifest_from_json(const nlohmann::json& j);

// Binary + sidecar manifest. Returns bytes written to the binary.
std::uint64_t write_corpus_file(const ActivationCorpus& corpus,
                                const std::filesystem::path& path);
// Reads the binary and, if present, the sidecar (which must agree on d and
// track_count).
ActivationCorpus read_corpus_file(const std::filesystem::path& path);

// Digest of the ordered validation track-id list. Corpora of different layers
// or models over the same tracks share this value.
std::string track_set_digest(const ActivationCorpus& corpus);
std::string track_set_digest(std::span<const std::string> track_ids);

struct StreamedRow {
  std::string_view track_id;
  std::uint64_t track_index = 0;
  std::uint32_t time_index = 0;
  std::span<const float> values;
};

// Sequential reader yielding rows in file order, holding at most batch_size
// rows in memory. Validation matches read_corpus.
class RowStream {
 public:
  RowStream(std::istream& in, std::size_t batch_size);

  std::uint32_t dim() const { return d_; }
  std::uint64_t track_count() const { return track_count_; }

  // Empty span at end of stream. Views are valid until the next call.
  std::span<const StreamedRow> next_batch();

 private:
  bool begin_track();

  std::istream& in_;
  std::size_t batch_size_;
  std::uint32_t d_ = 0;
  std::uint64_t track_count_ = 0;
  std::uint64_t track_index_ = 0;  // index of the current track
  bool in_track_ = false;
  std::string current_id_;
  std::uint32_t current_steps_ = 0;
  std::uint32_t next_step_ = 0;
  std::vector<float> buffer_;
  std::deque<std::string> batch_ids_;
  std::vector<StreamedRow> rows_;
};

// Source of training rows; rewound once per epoch.
class RowSource {
 public:
  virtual ~RowSource() = default;
  virtual std::uint32_t dim() const = 0;
  virtual void rewind() = 0;
  // Appends up to max_rows rows (row-major) to out, returns rows appended.
  virtual std::size_t next_batch(std::size_t max_rows,
                                 std::vector<float>& out) = 0;
};

class CorpusRowSource : public RowSource {
 public:
  explicit CorpusRowSource(const ActivationCorpus& corpus);
  std::uint32_t dim() const override { return corpus_.dim(); }
  void rewind() override;
  std::size_t next_batch(std::size_t max_rows, std::vector<float>& out) override;

 private:
  const ActivationCorpus& corpus_;
  std::size_t track_ = 0;
  std::size_t step_ = 0;
};

class FileRowSource : public RowSource {
 public:
  FileRowSource(std::filesystem::path path, std::size_t read_batch = 4096);
  std::uint32_t dim() const override { return d_; }
  void rewind() override;
  std::size_t next_batch(std::size_t max_rows, std::vector<float>& out) override;

 private:
  std::filesystem::path path_;
  std::size_t read_batch_;
  std::uint32_t d_ = 0;
  std::unique_ptr<std::ifstream> file_;
  std::unique_ptr<RowStream> stream_;
  std::span<const StreamedRow> pending_;
  std::size_t pending_pos_ = 0;
};

}  // namespace latent_forge
