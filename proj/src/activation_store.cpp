#include "latent_forge/activation_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "latent_forge/binary_io.hpp"
#include "latent_forge/digest.hpp"

namespace latent_forge {

namespace fs = std::filesystem;

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size_bytes()) == 0);
}

std::size_t ActivationCorpus::total_rows() const {
  std::size_t n = 0;
  for (const auto& t : tracks) n += t.steps();
  return n;
}

bool bit_identical(const ActivationCorpus& a, const ActivationCorpus& b) {
  if (!(a.manifest == b.manifest) || a.tracks.size() != b.tracks.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.tracks.size(); ++i) {
    const auto& ta = a.tracks[i];
    const auto& tb = b.tracks[i];
    if (ta.track_id != tb.track_id || ta.data.rows != tb.data.rows ||
        ta.data.cols != tb.data.cols || !bit_equal(ta.data.data, tb.data.data)) {
      return false;
    }
  }
  return true;
}

const std::vector<LayerPreset>& layer_presets() {
  static const std::vector<LayerPreset> presets = {
      {"musicgen-small", 1024, 24, {2, 6, 12, 18, 22}},
      {"musicgen-large", 2048, 48, {2, 12, 24, 36, 46}},
  };
  return presets;
}

const LayerPreset* find_preset(std::string_view model_name) {
  std::string lower(model_name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (const auto& p : layer_presets()) {
    if (lower == p.name) return &p;
    if (lower.size() > p.name.size() &&
        lower.compare(lower.size() - p.name.size(), p.name.size(), p.name) == 0 &&
        lower[lower.size() - p.name.size() - 1] == '/') {
      return &p;
    }
  }
  return nullptr;
}

std::vector<std::string> check_manifest(const CorpusManifest& m) {
  std::vector<std::string> warnings;
  if (m.d == 0) throw DataError("manifest: d must be positive");
  if (const auto* preset = find_preset(m.model_name)) {
    if (std::find(preset->layers.begin(), preset->layers.end(), m.layer_index) ==
        preset->layers.end()) {
      throw DataError("manifest: layer " + std::to_string(m.layer_index) +
                      " is not in the layer set of preset " +
                      std::string(preset->name));
    }
    if (m.d != preset->d) {
      warnings.push_back("manifest: d=" + std::to_string(m.d) + " but preset " +
                         std::string(preset->name) + " has d=" +
                         std::to_string(preset->d));
    }
  } else if (m.d != 1024 && m.d != 2048) {
    warnings.push_back("manifest: unusual activation dimensionality d=" +
                       std::to_string(m.d));
  }
  return warnings;
}

void validate_corpus(const ActivationCorpus& corpus) {
  const auto d = corpus.manifest.d;
  if (d == 0) throw DataError("corpus: d must be positive");
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < corpus.tracks.size(); ++i) {
    const auto& t = corpus.tracks[i];
    if (t.track_id.empty() || t.track_id.size() > kMaxTrackIdBytes) {
      throw DataError("corpus: track " + std::to_string(i) +
                      " has an empty or oversized id");
    }
    if (!seen.insert(t.track_id).second) {
      throw DataError("corpus: duplicate track_id '" + t.track_id + "'");
    }
    if (t.data.cols != d) {
      throw DimensionError("corpus: track '" + t.track_id + "' has dimension " +
                           std::to_string(t.data.cols) + ", manifest d=" +
                           std::to_string(d));
    }
    if (t.data.rows == 0 || t.data.rows > UINT32_MAX) {
      throw DataError("corpus: track '" + t.track_id +
                      "' must have 1..2^32-1 time steps");
    }
    if (t.data.data.size() != t.data.rows * t.data.cols) {
      throw DataError("corpus: track '" + t.track_id + "' buffer size mismatch");
    }
    for (float v : t.data.data) {
      if (!std::isfinite(v)) {
        throw DataError("corpus: non-finite activation in track '" +
                        t.track_id + "'");
      }
    }
  }
}

std::uint64_t encoded_track_bytes(std::uint32_t d, std::size_t id_bytes,
                                  std::uint64_t steps) {
  return 2 + id_bytes + 4 + steps * d * sizeof(float);
}

std::uint64_t encoded_size(const ActivationCorpus& corpus) {
  std::uint64_t n = kActvHeaderBytes;
  for (const auto& t : corpus.tracks) {
    n += encoded_track_bytes(corpus.manifest.d, t.track_id.size(), t.steps());
  }
  return n;
}

std::uint64_t write_corpus(const ActivationCorpus& corpus, std::ostream& out) {
  validate_corpus(corpus);
  out.write(kActvMagic, 4);
  binio::write_le<std::uint32_t>(out, kActvVersion);
  binio::write_le<std::uint32_t>(out, corpus.manifest.d);
  binio::write_le<std::uint64_t>(out, corpus.tracks.size());
  for (const auto& t : corpus.tracks) {
    binio::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.track_id.size()));
    out.write(t.track_id.data(), static_cast<std::streamsize>(t.track_id.size()));
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.steps()));
    binio::write_floats(out, t.data.data);
  }
  if (!out) throw DataError("corpus: write failure");
  return encoded_size(corpus);
}

namespace {

struct Header {
  std::uint32_t d = 0;
  std::uint64_t track_count = 0;
};

Header read_header(std::istream& in) {
  char magic[4];
  if (!binio::read_bytes(in, magic, 4)) throw FormatError("corpus: truncated stream in header");
  if (std::memcmp(magic, kActvMagic, 4) != 0) throw FormatError("corpus: bad magic");
  std::uint32_t version = 0;
  Header h;
  if (!binio::read_le(in, version)) throw FormatError("corpus: truncated stream in header");
  if (version != kActvVersion) {
    throw FormatError("corpus: unsupported version " + std::to_string(version));
  }
  if (!binio::read_le(in, h.d) || !binio::read_le(in, h.track_count)) {
    throw FormatError("corpus: truncated stream in header");
  }
  if (h.d == 0) throw FormatError("corpus: d must be positive");
  return h;
}

[[noreturn]] void truncated(std::uint64_t track) {
  throw FormatError("corpus: truncated stream at track " + std::to_string(track));
}

// Reads id + T for one track.
void read_track_header(std::istream& in, std::uint64_t index, std::string& id,
                       std::uint32_t& steps) {
  std::uint16_t len = 0;
  if (!binio::read_le(in, len)) truncated(index);
  if (len == 0) throw FormatError("corpus: empty track id at track " + std::to_string(index));
  id.resize(len);
  if (!binio::read_bytes(in, id.data(), len)) truncated(index);
  if (!binio::read_le(in, steps)) truncated(index);
  if (steps == 0) {
    throw FormatError("corpus: track " + std::to_string(index) + " has T=0");
  }
}

void check_finite(std::span<const float> values, std::uint64_t track) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw FormatError("corpus: non-finite activation at track " +
                        std::to_string(track));
    }
  }
}

}  // namespace

ActivationCorpus read_corpus(std::istream& in) {
  const Header h = read_header(in);
  ActivationCorpus corpus;
  corpus.manifest.d = h.d;
  corpus.manifest.track_count = h.track_count;
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < h.track_count; ++i) {
    TrackActivations t;
    std::uint32_t steps = 0;
    read_track_header(in, i, t.track_id, steps);
    if (!seen.insert(t.track_id).second) {
      throw FormatError("corpus: duplicate track_id '" + t.track_id + "'");
    }
    t.data = Matrix(steps, h.d);
    if (!binio::read_floats(in, t.data.data)) truncated(i);
    check_finite(t.data.data, i);
    corpus.tracks.push_back(std::move(t));
  }
  return corpus;
}

fs::path manifest_path_for(const fs::path& actv) {
  fs::path p = actv;
  p.replace_extension(".manifest.json");
  return p;
}

nlohmann::json manifest_to_json(const CorpusManifest& m) {
  return {{"model_name", m.model_name},
          {"layer_index", m.layer_index},
          {"d", m.d},
          {"track_count", m.track_count},
          {"source_notes", m.source_notes}};
}

CorpusManifest manifest_from_json(const nlohmann::json& j) {
  try {
    CorpusManifest m;
    m.model_name = j.value("model_name", std::string{});
    m.layer_index = j.at("layer_index").get<std::uint32_t>();
    m.d = j.at("d").get<std::uint32_t>();
    m.track_count = j.at("track_count").get<std::uint64_t>();
    m.source_notes = j.value("source_notes", std::string{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

std::uint64_t write_corpus_file(const ActivationCorpus& corpus, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("corpus: cannot open " + path.string() + " for writing");
  const auto n = write_corpus(corpus, out);
  out.close();
  if (!out) throw DataError("corpus: write failure on " + path.string());
  CorpusManifest manifest = corpus.manifest;
  manifest.track_count = corpus.tracks.size();
  std::ofstream mf(manifest_path_for(path), std::ios::trunc);
  mf << manifest_to_json(manifest).dump(2) << '\n';
  if (!mf) throw DataError("corpus: cannot write manifest for " + path.string());
  return n;
}

ActivationCorpus read_corpus_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("corpus: cannot open " + path.string());
  ActivationCorpus corpus = read_corpus(in);
  const auto mpath = manifest_path_for(path);
  if (fs::exists(mpath)) {
    std::ifstream mf(mpath);
    nlohmann::json j;
    try {
      mf >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest: " + mpath.string() + ": " + e.what());
    }
    CorpusManifest m = manifest_from_json(j);
    if (m.d != corpus.manifest.d || m.track_count != corpus.manifest.track_count) {
      throw DataError("manifest " + mpath.string() +
                      " disagrees with binary header (d or track_count)");
    }
    corpus.manifest = std::move(m);
  }
  return corpus;
}

std::string track_set_digest(std::span<const std::string> ids) {
  Sha256 h;
  for (const auto& id : ids) {
    h.update(id);
    h.update("\n", 1);
  }
  return h.hex_digest();
}

std::string track_set_digest(const ActivationCorpus& corpus) {
  std::vector<std::string> ids;
  ids.reserve(corpus.tracks.size());
  for (const auto& t : corpus.tracks) ids.push_back(t.track_id);
  return track_set_digest(ids);
}

// --- RowStream ---

RowStream::RowStream(std::istream& in, std::size_t batch_size)
    : in_(in), batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("stream_rows: batch_size must be positive");
  const Header h = read_header(in_);
  d_ = h.d;
  track_count_ = h.track_count;
  buffer_.resize(batch_size_ * d_);
  rows_.reserve(batch_size_);
}

bool RowStream::begin_track() {
  if (track_index_ >= track_count_) return false;
  read_track_header(in_, track_index_, current_id_, current_steps_);
  next_step_ = 0;
  in_track_ = true;
  return true;
}

std::span<const StreamedRow> RowStream::next_batch() {
  rows_.clear();
  batch_ids_.clear();
  std::size_t filled = 0;
  while (filled < batch_size_) {
    if (!in_track_ && !begin_track()) break;
    batch_ids_.push_back(current_id_);
    const std::string_view id = batch_ids_.back();
    const std::size_t take =
        std::min<std::size_t>(batch_size_ - filled, current_steps_ - next_step_);
    std::span<float> dst(buffer_.data() + filled * d_, take * d_);
    if (!binio::read_floats(in_, dst)) truncated(track_index_);
    check_finite(dst, track_index_);
    for (std::size_t r = 0; r < take; ++r) {
      rows_.push_back({id, track_index_, next_step_ + static_cast<std::uint32_t>(r),
                       std::span<const float>(dst.data() + r * d_, d_)});
    }
    filled += take;
    next_step_ += static_cast<std::uint32_t>(take);
    if (next_step_ == current_steps_) {
      in_track_ = false;
      ++track_index_;
    }
  }
  return rows_;
}

// --- row sources ---

CorpusRowSource::CorpusRowSource(const ActivationCorpus& corpus) : corpus_(corpus) {}

void CorpusRowSource::rewind() {
  track_ = 0;
  step_ = 0;
}

std::size_t CorpusRowSource::next_batch(std::size_t max_rows, std::vector<float>& out) {
  std::size_t n = 0;
  while (n < max_rows && track_ < corpus_.tracks.size()) {
    const auto& t = corpus_.tracks[track_];
    const std::size_t take = std::min(max_rows - n, t.steps() - step_);
    const auto* begin = t.data.data.data() + step_ * t.data.cols;
    out.insert(out.end(), begin, begin + take * t.data.cols);
    n += take;
    step_ += take;
    if (step_ == t.steps()) {
      ++track_;
      step_ = 0;
    }
  }
  return n;
}

FileRowSource::FileRowSource(fs::path path, std::size_t read_batch)
    : path_(std::move(path)), read_batch_(read_batch) {
  rewind();
}

void FileRowSource::rewind() {
  stream_.reset();
  file_ = std::make_unique<std::ifstream>(path_, std::ios::binary);
  if (!*file_) throw DataError("corpus: cannot open " + path_.string());
  stream_ = std::make_unique<RowStream>(*file_, read_batch_);
  d_ = stream_->dim();
  pending_ = {};
  pending_pos_ = 0;
}

std::size_t FileRowSource::next_batch(std::size_t max_rows, std::vector<float>& out) {
  std::size_t n = 0;
  while (n < max_rows) {
    if (pending_pos_ == pending_.size()) {
      pending_ = stream_->next_batch();
      pending_pos_ = 0;
      if (pending_.empty()) break;
    }
    const auto& row = pending_[pending_pos_++];
    out.insert(out.end(), row.values.begin(), row.values.end());
    ++n;
  }
  return n;
}

}  // namespace latent_forge
