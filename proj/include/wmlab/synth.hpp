#pragma once

#include "wmlab/image.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wmlab {

/// Deterministic photo-like test image: smooth colour fields, soft-edged
/// shapes and fine texture. Used for hermetic tests and toy training sets.
ImageBuffer synthetic_image(int height, int width, std::uint64_t seed);

/// Writes `count` PNGs named img_000.png, img_001.png, ... into `dir`.
std::vector<std::filesystem::path> write_synthetic_set(const std::filesystem::path& dir, int count, int height,
                                                       int width, std::uint64_t seed);

} // namespace wmlab
