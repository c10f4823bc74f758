#include "latent_forge/embedding.hpp"

#include <cmath>
#include <string>

#include "latent_forge/common.hpp"

namespace latent_forge {

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: dimension mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

void require_unit_norm(std::span<const float> v, std::string_view what) {
  const double n = l2_norm(v);
  if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitNormTolerance) {
    throw DataError(std::string(what) + " is not unit-normalized (norm " +
                    std::to_string(n) + ")");
  }
}

}  // namespace latent_forge
