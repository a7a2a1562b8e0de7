#pragma once

#include "wmlab/image.hpp"
#include "wmlab/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace wmlab {

/// r = watermarked - cover; throws std::invalid_argument on a shape mismatch.
Residual extract_residual(const ImageBuffer& cover, const ImageBuffer& watermarked);

/// Bilinearly resizes `r` to the target size, adds it and clamps to [0,1].
ImageBuffer transplant(const Residual& r, const ImageBuffer& target);

inline constexpr double kForgeryCanvas = 0.5;

struct ForgeryReport {
    int schema_version = 1;
    std::uint64_t seed = 0;
    int pairs = 0;
    std::string canvas = "mid-gray 0.5";
    // mean bit accuracy in percent
    double watermarked = 0.0;
    double residual_on_gray = 0.0;
    double residual_on_target = 0.0;
};

void to_json(nlohmann::json& j, const ForgeryReport& r);

/// Source i is watermarked with a seeded random payload; its residual is
/// decoded on a mid-gray canvas and transplanted onto target i mod |targets|.
ForgeryReport forgery_eval(const WatermarkModel& model, const std::vector<ImageBuffer>& sources,
                           const std::vector<ImageBuffer>& targets, std::uint64_t seed = 0);

std::string format_forgery_table(const ForgeryReport& r);

} // namespace wmlab
