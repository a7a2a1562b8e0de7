#pragma once

#include "wmlab/tensor.hpp"

#include <vector>

namespace wmlab {

/// Separable 1-D resampling operator: output sample i is a weighted sum of a
/// contiguous run of input samples starting at `start[i]`.
struct ResampleAxis {
    int in = 0;
    int out = 0;
    std::vector<int> start;
    std::vector<std::vector<double>> weights;
};

/// Triangle-filter (bilinear) weights with half-pixel centers. When shrinking,
/// the filter support widens by the scale factor, which antialiases.
ResampleAxis bilinear_axis(int in, int out);

/// Applies the axis operators to every (n, c) plane of an NCHW tensor.
Tensor resample_apply(const Tensor& x, const ResampleAxis& ay, const ResampleAxis& ax);
/// Transpose of resample_apply; maps output-shaped gradients back to the input grid.
Tensor resample_adjoint(const Tensor& dy, const ResampleAxis& ay, const ResampleAxis& ax);

} // namespace wmlab
