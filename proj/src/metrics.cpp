#include "wmlab/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace wmlab {

namespace {

void check_same(const ImageBuffer& a, const ImageBuffer& b, const char* what)
{
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
}

std::vector<double> gaussian_window(int size, double sigma)
{
    std::vector<double> g(size);
    double total = 0.0;
    const double c = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) {
        g[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// 'valid' separable filtering of an h x w plane
std::vector<double> filter_valid(const double* src, int h, int w, const std::vector<double>& g)
{
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * src[y * w + x + t];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * tmp[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

} // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b)
{
    check_same(a, b, "psnr");
    const auto& av = a.tensor().vec();
    const auto& bv = b.tensor().vec();
    double se = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(static_cast<double>(av.size()) / se);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& p)
{
    check_same(a, b, "ssim");
    const int h = a.height(), w = a.width();
    if (h < p.window || w < p.window) throw std::invalid_argument("ssim: image smaller than window");
    const Tensor ya = luma(a), yb = luma(b);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = ya[i] * ya[i];
        bb[i] = yb[i] * yb[i];
        ab[i] = ya[i] * yb[i];
    }
    const auto g = gaussian_window(p.window, p.sigma);
    const auto mu_a = filter_valid(ya.data(), h, w, g);
    const auto mu_b = filter_valid(yb.data(), h, w, g);
    const auto e_aa = filter_valid(aa.data(), h, w, g);
    const auto e_bb = filter_valid(bb.data(), h, w, g);
    const auto e_ab = filter_valid(ab.data(), h, w, g);
    const double c1 = p.k1 * p.k1, c2 = p.k2 * p.k2;
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma;
        const double vb = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

} // namespace wmlab
