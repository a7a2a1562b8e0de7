#include "wmlab/kernels.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmlab::kernels {

namespace {

constexpr int kColBlock = 512;

// Serial building blocks; the OpenMP layer sits one level up so that per-sample
// work can be distributed without nesting parallel regions.
using v8 = double __attribute__((vector_size(64)));

inline v8 load8(const double* p)
{
    v8 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline void store8(double* p, v8 v) { std::memcpy(p, &v, sizeof(v)); }

inline double hsum(v8 v) { return ((v[0] + v[4]) + (v[1] + v[5])) + ((v[2] + v[6]) + (v[3] + v[7])); }

void scale_rows(int i0, int i1, int j0, int j1, double beta, double* c, int ldc)
{
    for (int i = i0; i < i1; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * ldc;
        if (beta == 0.0) {
            std::fill(crow + j0, crow + j1, 0.0);
        } else if (beta != 1.0) {
            for (int j = j0; j < j1; ++j) crow[j] *= beta;
        }
    }
}

// C tile (MR rows x 16 columns) += alpha * A(rows, :) * B(:, cols), A read via
// (sa_i, sa_p) strides. Each element accumulates over p in increasing order,
// independent of the tiling.
template <int MR>
void axpy_tile(int i, int j, int k, double alpha, const double* a, std::size_t sa_i, std::size_t sa_p, const double* b,
               int ldb, double* c, int ldc)
{
    v8 acc[MR][2];
    for (int r = 0; r < MR; ++r) {
        acc[r][0] = load8(c + static_cast<std::size_t>(i + r) * ldc + j);
        acc[r][1] = load8(c + static_cast<std::size_t>(i + r) * ldc + j + 8);
    }
    for (int p = 0; p < k; ++p) {
        const double* brow = b + static_cast<std::size_t>(p) * ldb + j;
        const v8 b0 = load8(brow), b1 = load8(brow + 8);
        for (int r = 0; r < MR; ++r) {
            const double s = alpha * a[(i + r) * sa_i + p * sa_p];
            acc[r][0] += s * b0;
            acc[r][1] += s * b1;
        }
    }
    for (int r = 0; r < MR; ++r) {
        store8(c + static_cast<std::size_t>(i + r) * ldc + j, acc[r][0]);
        store8(c + static_cast<std::size_t>(i + r) * ldc + j + 8, acc[r][1]);
    }
}

void axpy_rows(int i0, int i1, int j0, int j1, int k, double alpha, const double* a, std::size_t sa_i,
               std::size_t sa_p, const double* b, int ldb, double* c, int ldc)
{
    int j = j0;
    for (; j + 16 <= j1; j += 16) {
        int i = i0;
        for (; i + 8 <= i1; i += 8) axpy_tile<8>(i, j, k, alpha, a, sa_i, sa_p, b, ldb, c, ldc);
        for (; i + 4 <= i1; i += 4) axpy_tile<4>(i, j, k, alpha, a, sa_i, sa_p, b, ldb, c, ldc);
        for (; i < i1; ++i) axpy_tile<1>(i, j, k, alpha, a, sa_i, sa_p, b, ldb, c, ldc);
    }
    if (j == j1) return;
    for (int i = i0; i < i1; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * ldc;
        for (int p = 0; p < k; ++p) {
            const double s = alpha * a[i * sa_i + p * sa_p];
            const double* brow = b + static_cast<std::size_t>(p) * ldb;
            for (int jj = j; jj < j1; ++jj) crow[jj] += s * brow[jj];
        }
    }
}

void gemm_nn_rows(int i0, int i1, int j0, int j1, int k, double alpha, const double* a, int lda, const double* b,
                  int ldb, double beta, double* c, int ldc)
{
    scale_rows(i0, i1, j0, j1, beta, c, ldc);
    axpy_rows(i0, i1, j0, j1, k, alpha, a, static_cast<std::size_t>(lda), 1, b, ldb, c, ldc);
}

void gemm_tn_rows(int i0, int i1, int j0, int j1, int k, double alpha, const double* a, int lda, const double* b,
                  int ldb, double beta, double* c, int ldc)
{
    scale_rows(i0, i1, j0, j1, beta, c, ldc);
    axpy_rows(i0, i1, j0, j1, k, alpha, a, 1, static_cast<std::size_t>(lda), b, ldb, c, ldc);
}

// MR x NR block of dot products over rows of A and rows of B. Every element
// uses eight lane sums (lane = p mod 8), a fixed reduction tree and a scalar
// tail, so the value does not depend on the block shape it was computed in.
template <int MR, int NR>
void dot_tile(int i, int j, int k, double alpha, const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc)
{
    const int k8 = k & ~7;
    v8 acc[MR][NR] = {};
    const double* ar[MR];
    const double* br[NR];
    for (int r = 0; r < MR; ++r) ar[r] = a + static_cast<std::size_t>(i + r) * lda;
    for (int q = 0; q < NR; ++q) br[q] = b + static_cast<std::size_t>(j + q) * ldb;
    for (int p = 0; p < k8; p += 8) {
        v8 bv[NR];
        for (int q = 0; q < NR; ++q) bv[q] = load8(br[q] + p);
        for (int r = 0; r < MR; ++r) {
            const v8 av = load8(ar[r] + p);
            for (int q = 0; q < NR; ++q) acc[r][q] += av * bv[q];
        }
    }
    for (int r = 0; r < MR; ++r)
        for (int q = 0; q < NR; ++q) {
            double dot = hsum(acc[r][q]);
            for (int p = k8; p < k; ++p) dot += ar[r][p] * br[q][p];
            double& dst = c[static_cast<std::size_t>(i + r) * ldc + j + q];
            dst = (beta == 0.0 ? 0.0 : beta * dst) + alpha * dot;
        }
}

void gemm_nt_rows(int i0, int i1, int j0, int j1, int k, double alpha, const double* a, int lda, const double* b,
                  int ldb, double beta, double* c, int ldc)
{
    int i = i0;
    for (; i + 2 <= i1; i += 2) {
        int j = j0;
        for (; j + 4 <= j1; j += 4) dot_tile<2, 4>(i, j, k, alpha, a, lda, b, ldb, beta, c, ldc);
        for (; j < j1; ++j) dot_tile<2, 1>(i, j, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
    for (; i < i1; ++i) {
        int j = j0;
        for (; j + 4 <= j1; j += 4) dot_tile<1, 4>(i, j, k, alpha, a, lda, b, ldb, beta, c, ldc);
        for (; j < j1; ++j) dot_tile<1, 1>(i, j, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
}

void gemm_tt_rows(int i0, int i1, int j0, int j1, int k, double alpha, const double* a, int lda, const double* b,
                  int ldb, double beta, double* c, int ldc)
{
    for (int i = i0; i < i1; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * ldc;
        for (int j = j0; j < j1; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * ldb;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[static_cast<std::size_t>(p) * lda + i] * brow[p];
            crow[j] = (beta == 0.0 ? 0.0 : beta * crow[j]) + alpha * s;
        }
    }
}

using RowKernel = void (*)(int, int, int, int, int, double, const double*, int, const double*, int, double, double*,
                           int);

RowKernel pick(bool ta, bool tb)
{
    if (!ta && !tb) return gemm_nn_rows;
    if (ta && !tb) return gemm_tn_rows;
    if (!ta && tb) return gemm_nt_rows;
    return gemm_tt_rows;
}

void gemm_serial(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc)
{
    pick(ta, tb)(0, m, 0, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

bool in_parallel()
{
#ifdef _OPENMP
    return omp_in_parallel() != 0;
#else
    return true;
#endif
}

} // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
          int ldb, double beta, double* c, int ldc)
{
    const RowKernel kern = pick(trans_a, trans_b);
    const long work = static_cast<long>(m) * n * k;
    if (in_parallel() || work < (1L << 16) || max_threads() == 1) {
        kern(0, m, 0, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
    constexpr int kRowBlock = 8;
    const int iblocks = (m + kRowBlock - 1) / kRowBlock;
    const int jblocks = (n + kColBlock - 1) / kColBlock;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ib = 0; ib < iblocks; ++ib) {
        for (int jb = 0; jb < jblocks; ++jb) {
            const int i0 = ib * kRowBlock, j0 = jb * kColBlock;
            kern(i0, std::min(m, i0 + kRowBlock), j0, std::min(n, j0 + kColBlock), k, alpha, a, lda, b, ldb, beta, c,
                 ldc);
        }
    }
}

void im2col(const double* img, int channels, int height, int width, int ksize, ConvGeom g, double* col)
{
    const int oh = conv_out(height, ksize, g);
    const int ow = conv_out(width, ksize, g);
    for (int ch = 0; ch < channels; ++ch) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                double* dst = col + (static_cast<std::size_t>(ch * ksize + ky) * ksize + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    double* drow = dst + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= height) {
                        std::fill(drow, drow + ow, 0.0);
                        continue;
                    }
                    const double* srow = img + (static_cast<std::size_t>(ch) * height + iy) * width;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        drow[ox] = (ix >= 0 && ix < width) ? srow[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, int channels, int height, int width, int ksize, ConvGeom g, double* img)
{
    const int oh = conv_out(height, ksize, g);
    const int ow = conv_out(width, ksize, g);
    for (int ch = 0; ch < channels; ++ch) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const double* src = col + (static_cast<std::size_t>(ch * ksize + ky) * ksize + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    const double* srow = src + static_cast<std::size_t>(oy) * ow;
                    double* drow = img + (static_cast<std::size_t>(ch) * height + iy) * width;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < width) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

namespace {

bool is_pointwise(int k, ConvGeom g) { return k == 1 && g.stride == 1 && g.pad == 0; }

} // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g)
{
    const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
    const int cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) throw std::invalid_argument("conv2d: channel mismatch");
    const int oh = conv_out(h, k, g), ow = conv_out(wd, k, g);
    const int kk = cin * k * k, p = oh * ow;
    Tensor y({n, cout, oh, ow});
    const bool pointwise = is_pointwise(k, g);
#pragma omp parallel
    {
        std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kk) * p);
#pragma omp for schedule(static)
        for (int s = 0; s < n; ++s) {
            const double* xs = x.data() + static_cast<std::size_t>(s) * cin * h * wd;
            const double* src = xs;
            if (!pointwise) {
                im2col(xs, cin, h, wd, k, g, col.data());
                src = col.data();
            }
            double* ys = y.data() + static_cast<std::size_t>(s) * cout * p;
            gemm_serial(false, false, cout, p, kk, 1.0, w.data(), kk, src, p, 0.0, ys, p);
            if (!bias.empty()) {
                for (int o = 0; o < cout; ++o) {
                    const double b = bias[o];
                    double* row = ys + static_cast<std::size_t>(o) * p;
#pragma omp simd
                    for (int j = 0; j < p; ++j) row[j] += b;
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                     Tensor* dbias)
{
    const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
    const int cout = w.dim(0), k = w.dim(2);
    const int oh = dy.h(), ow = dy.w();
    const int kk = cin * k * k, p = oh * ow;
    const bool pointwise = is_pointwise(k, g);
    // Per-sample weight gradients are reduced in sample order so results do
    // not depend on the thread count.
    std::vector<double> dw_parts(dw ? static_cast<std::size_t>(n) * w.numel() : 0);
#pragma omp parallel
    {
        std::vector<double> col(static_cast<std::size_t>(kk) * p);
#pragma omp for schedule(static)
        for (int s = 0; s < n; ++s) {
            const double* xs = x.data() + static_cast<std::size_t>(s) * cin * h * wd;
            const double* dys = dy.data() + static_cast<std::size_t>(s) * cout * p;
            if (dw) {
                const double* src = xs;
                if (!pointwise) {
                    im2col(xs, cin, h, wd, k, g, col.data());
                    src = col.data();
                }
                gemm_serial(false, true, cout, kk, p, 1.0, dys, p, src, p, 0.0,
                            dw_parts.data() + static_cast<std::size_t>(s) * w.numel(), kk);
            }
            if (dx) {
                double* dxs = dx->data() + static_cast<std::size_t>(s) * cin * h * wd;
                if (pointwise) {
                    gemm_serial(true, false, kk, p, cout, 1.0, w.data(), kk, dys, p, 1.0, dxs, p);
                } else {
                    gemm_serial(true, false, kk, p, cout, 1.0, w.data(), kk, dys, p, 0.0, col.data(), p);
                    col2im_add(col.data(), cin, h, wd, k, g, dxs);
                }
            }
        }
    }
    if (dw) {
        for (int s = 0; s < n; ++s) {
            const double* part = dw_parts.data() + static_cast<std::size_t>(s) * w.numel();
            for (std::size_t i = 0; i < w.numel(); ++i) (*dw)[i] += part[i];
        }
    }
    if (dbias) {
        for (int s = 0; s < n; ++s) {
            for (int o = 0; o < cout; ++o) {
                const double* row = dy.data() + (static_cast<std::size_t>(s) * cout + o) * p;
                double acc = 0.0;
                for (int j = 0; j < p; ++j) acc += row[j];
                (*dbias)[o] += acc;
            }
        }
    }
}

Tensor depthwise_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g)
{
    const int n = x.n(), c = x.c(), h = x.h(), wd = x.w();
    const int k = w.dim(2);
    if (w.dim(0) != c) throw std::invalid_argument("depthwise: channel mismatch");
    const int oh = conv_out(h, k, g), ow = conv_out(wd, k, g);
    Tensor y({n, c, oh, ow});
#pragma omp parallel for collapse(2) schedule(static)
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const double* xp = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * wd;
            const double* wp = w.data() + static_cast<std::size_t>(ch) * k * k;
            double* yp = y.data() + (static_cast<std::size_t>(s) * c + ch) * oh * ow;
            const double b = bias.empty() ? 0.0 : bias[ch];
            for (int oy = 0; oy < oh; ++oy) {
                double* yrow = yp + static_cast<std::size_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) yrow[ox] = b;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* xrow = xp + static_cast<std::size_t>(iy) * wd;
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wp[ky * k + kx];
                        const int base = -g.pad + kx;
                        // interior range where ix is in bounds
                        int lo = 0, hi = ow;
                        while (lo < ow && lo * g.stride + base < 0) ++lo;
                        while (hi > lo && (hi - 1) * g.stride + base >= wd) --hi;
                        if (g.stride == 1) {
#pragma omp simd
                            for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox + base];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox * g.stride + base];
                        }
                    }
                }
            }
        }
    }
    return y;
}

void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                        Tensor* dbias)
{
    const int n = x.n(), c = x.c(), h = x.h(), wd = x.w();
    const int k = w.dim(2);
    const int oh = dy.h(), ow = dy.w();
    // Parallel over channels; each channel's weight gradient sums samples in order.
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* wp = w.data() + static_cast<std::size_t>(ch) * k * k;
        for (int s = 0; s < n; ++s) {
            const double* xp = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * wd;
            const double* dyp = dy.data() + (static_cast<std::size_t>(s) * c + ch) * oh * ow;
            double* dxp = dx ? dx->data() + (static_cast<std::size_t>(s) * c + ch) * h * wd : nullptr;
            if (dbias) {
                double acc = 0.0;
                for (int i = 0; i < oh * ow; ++i) acc += dyp[i];
                (*dbias)[ch] += acc;
            }
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const int base = -g.pad + kx;
                    int lo = 0, hi = ow;
                    while (lo < ow && lo * g.stride + base < 0) ++lo;
                    while (hi > lo && (hi - 1) * g.stride + base >= wd) --hi;
                    double wacc = 0.0;
                    const double wv = wp[ky * k + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xp + static_cast<std::size_t>(iy) * wd;
                        const double* grow = dyp + static_cast<std::size_t>(oy) * ow;
                        if (g.stride == 1) {
#pragma omp simd reduction(+ : wacc)
                            for (int ox = lo; ox < hi; ++ox) wacc += grow[ox] * xrow[ox + base];
                            if (dxp) {
                                double* dxrow = dxp + static_cast<std::size_t>(iy) * wd;
#pragma omp simd
                                for (int ox = lo; ox < hi; ++ox) dxrow[ox + base] += wv * grow[ox];
                            }
                        } else {
                            for (int ox = lo; ox < hi; ++ox) {
                                wacc += grow[ox] * xrow[ox * g.stride + base];
                                if (dxp) dxp[static_cast<std::size_t>(iy) * wd + ox * g.stride + base] += wv * grow[ox];
                            }
                        }
                    }
                    if (dw) (*dw)[static_cast<std::size_t>(ch) * k * k + ky * k + kx] += wacc;
                }
            }
        }
    }
}

} // namespace wmlab::kernels
