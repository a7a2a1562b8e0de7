#pragma once

#include "wmlab/image.hpp"

namespace wmlab {

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// 10 log10(1 / MSE) over all channels with peak 1.0; +inf for identical inputs.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Mean SSIM over all fully-contained Gaussian windows of the luma plane.
double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params = {});

} // namespace wmlab
