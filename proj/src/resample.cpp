#include "wmlab/resample.hpp"

#include <algorithm>
#include <cmath>

namespace wmlab {

ResampleAxis bilinear_axis(int in, int out)
{
    if (in < 1 || out < 1) throw std::invalid_argument("bilinear_axis: sizes must be >= 1");
    ResampleAxis ax;
    ax.in = in;
    ax.out = out;
    ax.start.resize(out);
    ax.weights.resize(out);
    const double scale = static_cast<double>(in) / out;
    const double support = std::max(scale, 1.0);
    for (int i = 0; i < out; ++i) {
        const double center = (i + 0.5) * scale;
        int lo = static_cast<int>(std::floor(center - support));
        int hi = static_cast<int>(std::ceil(center + support));
        lo = std::max(lo, 0);
        hi = std::min(hi, in);
        std::vector<double> w;
        double total = 0.0;
        int first = -1;
        for (int j = lo; j < hi; ++j) {
            const double d = std::abs((j + 0.5 - center) / support);
            const double v = d < 1.0 ? 1.0 - d : 0.0;
            if (v <= 0.0 && first < 0) continue;
            if (first < 0) first = j;
            w.push_back(v);
            total += v;
        }
        while (!w.empty() && w.back() <= 0.0) w.pop_back();
        if (first < 0 || total <= 0.0) {
            // only possible for degenerate geometry; fall back to nearest
            first = std::clamp(static_cast<int>(center), 0, in - 1);
            w.assign(1, 1.0);
            total = 1.0;
        }
        for (double& v : w) v /= total;
        ax.start[i] = first;
        ax.weights[i] = std::move(w);
    }
    return ax;
}

Tensor resample_apply(const Tensor& x, const ResampleAxis& ay, const ResampleAxis& ax)
{
    const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
    if (h != ay.in || w != ax.in) throw std::invalid_argument("resample_apply: axis/input size mismatch");
    const int oh = ay.out, ow = ax.out;
    Tensor y({n, c, oh, ow});
#pragma omp parallel
    {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
#pragma omp for schedule(static)
        for (int plane = 0; plane < n * c; ++plane) {
            const double* src = x.data() + static_cast<std::size_t>(plane) * h * w;
            double* dst = y.data() + static_cast<std::size_t>(plane) * oh * ow;
            for (int r = 0; r < h; ++r) {
                const double* row = src + static_cast<std::size_t>(r) * w;
                for (int j = 0; j < ow; ++j) {
                    const auto& wt = ax.weights[j];
                    const double* p = row + ax.start[j];
                    double acc = 0.0;
                    for (std::size_t t = 0; t < wt.size(); ++t) acc += wt[t] * p[t];
                    tmp[static_cast<std::size_t>(r) * ow + j] = acc;
                }
            }
            for (int i = 0; i < oh; ++i) {
                double* drow = dst + static_cast<std::size_t>(i) * ow;
                std::fill(drow, drow + ow, 0.0);
                const auto& wt = ay.weights[i];
                for (std::size_t t = 0; t < wt.size(); ++t) {
                    const double* trow = tmp.data() + static_cast<std::size_t>(ay.start[i] + t) * ow;
                    const double wv = wt[t];
                    for (int j = 0; j < ow; ++j) drow[j] += wv * trow[j];
                }
            }
        }
    }
    return y;
}

Tensor resample_adjoint(const Tensor& dy, const ResampleAxis& ay, const ResampleAxis& ax)
{
    const int n = dy.n(), c = dy.c(), oh = dy.h(), ow = dy.w();
    const int h = ay.in, w = ax.in;
    Tensor dx({n, c, h, w});
#pragma omp parallel
    {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
#pragma omp for schedule(static)
        for (int plane = 0; plane < n * c; ++plane) {
            const double* g = dy.data() + static_cast<std::size_t>(plane) * oh * ow;
            double* dst = dx.data() + static_cast<std::size_t>(plane) * h * w;
            std::fill(tmp.begin(), tmp.end(), 0.0);
            for (int i = 0; i < oh; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * ow;
                const auto& wt = ay.weights[i];
                for (std::size_t t = 0; t < wt.size(); ++t) {
                    double* trow = tmp.data() + static_cast<std::size_t>(ay.start[i] + t) * ow;
                    const double wv = wt[t];
                    for (int j = 0; j < ow; ++j) trow[j] += wv * grow[j];
                }
            }
            for (int r = 0; r < h; ++r) {
                const double* trow = tmp.data() + static_cast<std::size_t>(r) * ow;
                double* drow = dst + static_cast<std::size_t>(r) * w;
                for (int j = 0; j < ow; ++j) {
                    const auto& wt = ax.weights[j];
                    for (std::size_t t = 0; t < wt.size(); ++t) drow[ax.start[j] + t] += wt[t] * trow[j];
                }
            }
        }
    }
    return dx;
}

} // namespace wmlab
