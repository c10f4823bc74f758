#pragma once

// Minimal reader for 2-D NumPy .npy arrays (little-endian float32/float64,
// C order). Used to convert externally extracted activations into ACTV.

#include <filesystem>

#include "latent_forge/common.hpp"

namespace latent_forge {

Matrix read_npy_matrix(const std::filesystem::path& path);

}  // namespace latent_forge
