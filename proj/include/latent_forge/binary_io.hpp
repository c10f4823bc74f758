#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "latent_forge/common.hpp"

// Little-endian primitive readers/writers shared by the binary formats.
namespace latent_forge::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
  requires std::is_arithmetic_v<T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

// Returns false on short read.
template <typename T>
  requires std::is_arithmetic_v<T>
bool read_le(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return in.gcount() == static_cast<std::streamsize>(sizeof(T));
}

inline bool read_bytes(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  return in.gcount() == static_cast<std::streamsize>(n);
}

inline bool read_floats(std::istream& in, std::span<float> dst) {
  return read_bytes(in, reinterpret_cast<char*>(dst.data()), dst.size_bytes());
}

// Counts bytes without storing them; used to predict and hash outputs.
class CountingBuf : public std::streambuf {
 public:
  std::uint64_t count() const { return count_; }

 protected:
  int_type overflow(int_type ch) override {
    if (!traits_type::eq_int_type(ch, traits_type::eof())) ++count_;
    return traits_type::not_eof(ch);
  }
  std::streamsize xsputn(const char*, std::streamsize n) override {
    count_ += static_cast<std::uint64_t>(n);
    return n;
  }

 private:
  std::uint64_t count_ = 0;
};

}  // namespace latent_forge::binio
