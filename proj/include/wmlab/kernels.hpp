#pragma once

// Compute kernels behind the autograd ops. `kernels::` holds the OpenMP
// implementations used at run time; `kernels::reference` holds direct serial
// loops kept as test oracles and as the benchmark baseline.

#include "wmlab/tensor.hpp"

namespace wmlab::kernels {

struct ConvGeom {
    int stride = 1;
    int pad = 0;
};

inline int conv_out(int in, int k, ConvGeom g) { return (in + 2 * g.pad - k) / g.stride + 1; }

/// C = alpha * op(A) * op(B) + beta * C, row-major; op(X) = X or X^T.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
          int ldb, double beta, double* c, int ldc);

void im2col(const double* img, int channels, int height, int width, int ksize, ConvGeom g, double* col);
void col2im_add(const double* col, int channels, int height, int width, int ksize, ConvGeom g, double* img);

/// x [N,C,H,W], w [O,C,k,k], bias [O] or empty -> [N,O,OH,OW]
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g);
/// Accumulates into any non-null gradient tensor.
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                     Tensor* dbias);

/// Depthwise: w [C,1,k,k]
Tensor depthwise_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g);
void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                        Tensor* dbias);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
          int ldb, double beta, double* c, int ldc);
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                     Tensor* dbias);
Tensor depthwise_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g);
void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                        Tensor* dbias);

} // namespace reference

} // namespace wmlab::kernels
