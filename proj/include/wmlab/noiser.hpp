#pragma once

#include "wmlab/autograd.hpp"
#include "wmlab/image.hpp"
#include "wmlab/rng.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wmlab {

// Order follows the robustness table: pixel-level noises, then geometric ones.
enum class NoiseKind {
    JpegCompression,
    Brightness,
    Contrast,
    Saturation,
    GaussianBlur,
    GaussianNoise,
    ColorJiggle,
    Posterize,
    RGBShift,
    Flip,
    Rotation,
    RandomErasing,
    Perspective,
    RandomResizedCrop,
    Identity, // not part of the suite; used for consistency checks
};

inline constexpr int kSuiteSize = 14;
inline constexpr std::array<NoiseKind, kSuiteSize> kSuiteKinds = {
    NoiseKind::JpegCompression, NoiseKind::Brightness,    NoiseKind::Contrast,      NoiseKind::Saturation,
    NoiseKind::GaussianBlur,    NoiseKind::GaussianNoise, NoiseKind::ColorJiggle,   NoiseKind::Posterize,
    NoiseKind::RGBShift,        NoiseKind::Flip,          NoiseKind::Rotation,      NoiseKind::RandomErasing,
    NoiseKind::Perspective,     NoiseKind::RandomResizedCrop,
};

std::string_view noise_name(NoiseKind k);
std::optional<NoiseKind> noise_from_name(std::string_view name);
bool is_geometric(NoiseKind k);

enum class NoiseMode { TrainDifferentiable, EvalExact };

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Distortion strengths of the training/evaluation suite.
struct NoiseRanges {
    int jpeg_min_quality = 50;
    Range brightness{0.75, 1.25};
    Range contrast{0.75, 1.25};
    Range saturation{0.75, 1.25};
    int blur_kernel = 5;
    Range blur_sigma{0.1, 1.5};
    double noise_std = 0.04;
    int posterize_bits = 4;
    std::array<double, 4> jiggle{0.1, 0.1, 0.1, 0.02}; // brightness, contrast, saturation, hue
    double rgb_shift = 0.05;
    double flip_prob = 1.0;
    Range rotation_deg{0.0, 10.0};
    Range erase_scale{0.02, 0.1};
    Range erase_ratio{0.5, 1.5};
    double perspective_scale = 0.1;
    Range crop_scale{0.75, 1.0};
    Range crop_ratio{3.0 / 4.0, 4.0 / 3.0};
};

/// One distortion with concrete sampled parameters. Geometric quantities are
/// stored relative to the image size so a spec applies at any resolution.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::Identity;
    NoiseMode mode = NoiseMode::EvalExact;

    int quality = 50;
    double factor = 1.0;                   // brightness / contrast / saturation
    double sigma = 1.0;                    // blur
    int kernel = 5;
    double std = 0.0;                      // gaussian noise
    int bits = 8;                          // posterize
    std::array<double, 4> jiggle{1.0, 1.0, 1.0, 0.0};
    std::array<double, 3> shift{0.0, 0.0, 0.0};
    bool flip = false;
    double angle_deg = 0.0;
    double erase_area = 0.0, erase_ratio = 1.0, erase_cy = 0.5, erase_cx = 0.5;
    std::array<double, 8> corners{};       // inward offsets per corner as fractions of the allowed maximum
    double perspective_scale = 0.0;
    double crop_scale = 1.0, crop_ratio = 1.0, crop_fy = 0.0, crop_fx = 0.0;
};

struct CropWindow {
    int y0, x0, height, width;
};

/// Integer crop rectangle for a RandomResizedCrop spec; always retains at
/// least crop_scale_min of the area.
CropWindow crop_window(const NoiseSpec& spec, int height, int width, double min_area_fraction = 0.75);

NoiseSpec sample_spec(NoiseKind kind, const NoiseRanges& ranges, NoiseMode mode, Rng& rng);
/// One spec per suite kind, in suite order; deterministic per seed.
std::vector<NoiseSpec> sample_suite(std::uint64_t seed, NoiseMode mode = NoiseMode::EvalExact,
                                    const NoiseRanges& ranges = {});

/// Differentiable application to a batch [N,3,H,W]; every sample gets the same
/// parameters. `rng` supplies per-pixel randomness (gaussian noise only).
Var apply_noise(const NoiseSpec& spec, const Var& x, Rng& rng);
/// Exact application (real JPEG codec in EvalExact mode).
ImageBuffer apply_noise(const NoiseSpec& spec, const ImageBuffer& img, Rng& rng);

/// Differentiable JPEG approximation (block DCT, cubic soft rounding, 4:2:0 chroma).
Var jpeg_surrogate(const Var& x, int quality);

void to_json(nlohmann::json& j, const NoiseRanges& r);
void from_json(const nlohmann::json& j, NoiseRanges& r);
void to_json(nlohmann::json& j, const NoiseSpec& s);
void from_json(const nlohmann::json& j, NoiseSpec& s);

} // namespace wmlab
