#pragma once

#include <memory>
#include <streambuf>
#include <string>
#include <string_view>

namespace latent_forge {

// Incremental SHA-256, hex-encoded on finish.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::string hex_digest();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

// ostream sink that feeds everything written into a Sha256.
class HashingBuf : public std::streambuf {
 public:
  explicit HashingBuf(Sha256& hash) : hash_(hash) {}

 protected:
  int_type overflow(int_type ch) override;
  std::streamsize xsputn(const char* s, std::streamsize n) override;

 private:
  Sha256& hash_;
};

}  // namespace latent_forge
