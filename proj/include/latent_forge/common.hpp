#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latent_forge {

// Malformed or inconsistent input data (bad files, invariant violations).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class DivergenceError : public DataError {
 public:
  DivergenceError(const std::string& what, std::uint64_t step)
      : DataError(what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

// Invalid user configuration (flags, policies, endpoint specs).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major float matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}

  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  bool operator==(const Matrix&) const = default;
};

// Bitwise equality of float buffers (distinguishes -0.0 and NaN payloads).
bool bit_equal(std::span<const float> a, std::span<const float> b);

}  // namespace latent_forge
