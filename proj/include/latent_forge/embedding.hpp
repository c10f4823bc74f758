#pragma once

#include <span>
#include <string_view>

namespace latent_forge {

// Embeddings arriving from external embedders must be unit-normalized to
// within this tolerance on the L2 norm.
inline constexpr double kUnitNormTolerance = 1e-4;

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

// Throws DataError naming `what` when |norm - 1| > kUnitNormTolerance.
void require_unit_norm(std::span<const float> v, std::string_view what);

}  // namespace latent_forge
