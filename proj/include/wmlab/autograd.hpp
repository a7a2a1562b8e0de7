#pragma once

// Reverse-mode automatic differentiation over Tensor values. A Var is a handle
// to a graph node; ops record a backward closure when any input requires a
// gradient and grad mode is enabled.

#include "wmlab/kernels.hpp"
#include "wmlab/resample.hpp"
#include "wmlab/tensor.hpp"

#include <array>
#include <functional>
#include <memory>
#include <vector>

namespace wmlab {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool defined() const { return static_cast<bool>(node_); }
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return node_; }

    /// Seeds d(self)/d(self) = 1 (scalar) or `seed`, then propagates.
    void backward() const;
    void backward(const Tensor& seed) const;

    static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph construction for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

Var constant(Tensor t);

namespace ops {

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var square(const Var& a);
/// x [N,C,...] * g[C] (per-channel) and x + b[C]
Var mul_channel(const Var& x, const Var& g);
Var add_channel(const Var& x, const Var& b);
/// a * s where s is a learnable scalar of shape [1]
Var mul_scalar_var(const Var& a, const Var& s);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var gelu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
Var clamp(const Var& x, double lo, double hi);

// reductions
Var sum(const Var& x);
Var mean(const Var& x);
/// Mean over all but the leading dim -> [N]
Var mean_per_sample(const Var& x);

// linear algebra / conv
Var linear(const Var& x, const Var& w, const Var& b);
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var depthwise_conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// normalization (per sample; never couples batch elements)
Var instance_norm(const Var& x, double eps = 1e-5);
/// Normalizes across channels at each pixel (x [N,C,H,W]) or across features (x [N,F]).
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
/// Scales each pixel's channel vector of x [N,C,H,W] to unit length.
Var normalize_channels(const Var& x, double eps = 1e-10);

// shape / layout
Var reshape(const Var& x, Shape s);
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int first, int count);
Var global_avg_pool(const Var& x);
Var upsample_nearest(const Var& x, int factor);
/// Zero-pads x [N,C,h,w] into the centre of an HxW canvas.
Var pad_center(const Var& x, int height, int width);
Var pad_reflect(const Var& x, int pad);
Var pad_replicate_to(const Var& x, int height, int width);
Var crop(const Var& x, int y0, int x0, int height, int width);
Var flip_horizontal(const Var& x);
Var slice_batch(const Var& x, int index);
Var stack_batch(const std::vector<Var>& xs);

// resampling
Var resize_bilinear(const Var& x, int height, int width);
/// Bilinear sampling at source coordinates `grid` [H',W',2] (x, y in pixel
/// units, pixel centres at integer positions) with reflection at borders.
Var grid_sample_reflect(const Var& x, const Tensor& grid);

// colour / pixel transforms
/// out[c] = sum_k m[c][k] * x[k] + offset[c] for 3-channel images.
Var mix_channels(const Var& x, const std::array<std::array<double, 3>, 3>& m, const std::array<double, 3>& offset);
/// Multiplies by a constant tensor of identical shape.
Var mul_const(const Var& x, const Tensor& t);
Var add_const(const Var& x, const Tensor& t);
/// Forward quantizes to `bits` per channel at 8-bit depth; backward is identity.
Var posterize_ste(const Var& x, int bits);
/// round(x) + (x - round(x))^3
Var soft_round(const Var& x);
/// Orthonormal 8x8 block DCT per plane (H, W multiples of 8) and its inverse.
Var block_dct8(const Var& x);
Var block_idct8(const Var& x);

// losses
/// Binary cross-entropy of probabilities p [N,l] against targets in {0,1},
/// summed over bits and averaged over the batch.
Var bce(const Var& p, const Tensor& target);
Var mse(const Var& a, const Var& b);
/// Focal frequency loss of the difference image d [N,C,H,W] (orthonormal 2-D DFT
/// per plane, spectrum weight (|D| / max|D|)^alpha; the weight is not detached).
Var focal_frequency(const Var& d, double alpha = 1.0);

} // namespace ops

} // namespace wmlab
