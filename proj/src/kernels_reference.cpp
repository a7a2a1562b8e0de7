#include "wmlab/kernels.hpp"

namespace wmlab::kernels::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
          int ldb, double beta, double* c, int ldc)
{
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = trans_a ? a[static_cast<std::size_t>(p) * lda + i] : a[static_cast<std::size_t>(i) * lda + p];
                const double bv = trans_b ? b[static_cast<std::size_t>(j) * ldb + p] : b[static_cast<std::size_t>(p) * ldb + j];
                s += av * bv;
            }
            double& cv = c[static_cast<std::size_t>(i) * ldc + j];
            cv = (beta == 0.0 ? 0.0 : beta * cv) + alpha * s;
        }
    }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g)
{
    const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
    const int cout = w.dim(0), k = w.dim(2);
    const int oh = conv_out(h, k, g), ow = conv_out(wd, k, g);
    Tensor y({n, cout, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < cout; ++o)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * g.stride - g.pad + ky;
                                const int ix = ox * g.stride - g.pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += w.at(o, ci, ky, kx) * x.at(s, ci, iy, ix);
                            }
                    y.at(s, o, oy, ox) = acc;
                }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                     Tensor* dbias)
{
    const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
    const int cout = w.dim(0), k = w.dim(2);
    const int oh = dy.h(), ow = dy.w();
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < cout; ++o)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double gv = dy.at(s, o, oy, ox);
                    if (dbias) (*dbias)[o] += gv;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * g.stride - g.pad + ky;
                                const int ix = ox * g.stride - g.pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                if (dw) dw->at(o, ci, ky, kx) += gv * x.at(s, ci, iy, ix);
                                if (dx) dx->at(s, ci, iy, ix) += gv * w.at(o, ci, ky, kx);
                            }
                }
}

Tensor depthwise_forward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom g)
{
    const int n = x.n(), c = x.c(), h = x.h(), wd = x.w();
    const int k = w.dim(2);
    const int oh = conv_out(h, k, g), ow = conv_out(wd, k, g);
    Tensor y({n, c, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[ch];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride - g.pad + ky;
                            const int ix = ox * g.stride - g.pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            acc += w.at(ch, 0, ky, kx) * x.at(s, ch, iy, ix);
                        }
                    y.at(s, ch, oy, ox) = acc;
                }
    return y;
}

void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeom g, Tensor* dx, Tensor* dw,
                        Tensor* dbias)
{
    const int n = x.n(), c = x.c(), h = x.h(), wd = x.w();
    const int k = w.dim(2);
    const int oh = dy.h(), ow = dy.w();
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double gv = dy.at(s, ch, oy, ox);
                    if (dbias) (*dbias)[ch] += gv;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride - g.pad + ky;
                            const int ix = ox * g.stride - g.pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            if (dw) dw->at(ch, 0, ky, kx) += gv * x.at(s, ch, iy, ix);
                            if (dx) dx->at(s, ch, iy, ix) += gv * w.at(ch, 0, ky, kx);
                        }
                }
}

} // namespace wmlab::kernels::reference
