#pragma once

#include "wmlab/tensor.hpp"

#include <array>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmlab {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// RGB image with values in [0,1], stored as a [1,3,H,W] tensor.
class ImageBuffer {
public:
    static constexpr int kMinSide = 16;

    ImageBuffer() = default;
    ImageBuffer(int height, int width, double fill = 0.0);
    /// Validates shape [1,3,H,W] and the value range.
    explicit ImageBuffer(Tensor t);
    /// Clamps into [0,1] instead of rejecting out-of-range values.
    static ImageBuffer clamped(Tensor t);

    int height() const { return t_.h(); }
    int width() const { return t_.w(); }
    bool empty() const { return t_.empty(); }

    double& at(int c, int y, int x) { return t_.at(0, c, y, x); }
    double at(int c, int y, int x) const { return t_.at(0, c, y, x); }

    const Tensor& tensor() const { return t_; }

private:
    Tensor t_;
};

/// Signed additive watermark signal with the shape of an image.
struct Residual {
    Tensor values; // [1,3,H,W]
};

using Rgb = std::array<double, 3>;

/// BT.601 full-range YUV with chroma centred on zero.
Rgb rgb_to_yuv(const Rgb& rgb);
Rgb yuv_to_rgb(const Rgb& yuv);
/// Per-pixel transform of a [N,3,H,W] tensor (planes Y, U, V).
Tensor rgb_to_yuv(const Tensor& rgb);
Tensor yuv_to_rgb(const Tensor& yuv);
/// Luma plane [1,1,H,W].
Tensor luma(const ImageBuffer& img);

/// Bilinear resize with antialiasing on downscale; output clamped to [0,1].
ImageBuffer resize(const ImageBuffer& img, int new_height, int new_width);

/// Rounds to the nearest 8-bit level.
ImageBuffer quantize8(const ImageBuffer& img);

enum class ImageFormat { Png, Jpeg };

struct SaveOptions {
    ImageFormat format = ImageFormat::Png;
    int jpeg_quality = 95;
};

ImageBuffer load_image(const std::filesystem::path& path);
void save_image(const ImageBuffer& img, const std::filesystem::path& path, SaveOptions opts = {});
/// Guesses the format from the extension (.jpg/.jpeg -> JPEG, otherwise PNG).
SaveOptions options_for_path(const std::filesystem::path& path, int jpeg_quality = 95);
struct NamedImage {
    std::string name;
    ImageBuffer image;
};

/// Every readable image file in `dir`, sorted by file name. Unreadable files
/// are reported to `warnings` and skipped; a missing directory throws.
std::vector<NamedImage> load_image_dir(const std::filesystem::path& dir, std::ostream* warnings = nullptr);

/// Encodes to JPEG at `quality` in memory and decodes again.
ImageBuffer jpeg_roundtrip(const ImageBuffer& img, int quality);

} // namespace wmlab
