#include "wmlab/noiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace wmlab {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

constexpr Mat3 kToYuv = {{{0.299, 0.587, 0.114},
                          {-0.168735891647856, -0.331264108352144, 0.5},
                          {0.5, -0.418687589158345, -0.081312410841655}}};
constexpr Mat3 kToRgb = {{{1.0, 0.0, 1.402}, {1.0, -0.344136286201022, -0.714136286201022}, {1.0, 1.772, 0.0}}};

Mat3 matmul(const Mat3& a, const Mat3& b)
{
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
}

constexpr int kLumaQ[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                            14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                            18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                            49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaQ[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                              24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                              99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                              99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// libjpeg quality scaling of the base tables
std::array<double, 64> scaled_table(const int (&base)[64], int quality)
{
    quality = std::clamp(quality, 1, 100);
    const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<double, 64> t{};
    for (int i = 0; i < 64; ++i) t[i] = std::clamp((base[i] * s + 50) / 100, 1, 255);
    return t;
}

Tensor tiled(const Shape& shape, const std::array<double, 64>& table, bool reciprocal)
{
    Tensor t(shape);
    const int planes = shape[0] * shape[1], h = shape[2], w = shape[3];
    for (int p = 0; p < planes; ++p)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double q = table[(y % 8) * 8 + x % 8];
                t[(static_cast<std::size_t>(p) * h + y) * w + x] = reciprocal ? 1.0 / q : q;
            }
    return t;
}

Var quantize_planes(const Var& planes, const std::array<double, 64>& table)
{
    const Var coeffs = ops::block_dct8(planes);
    const Var q = ops::soft_round(ops::mul_const(coeffs, tiled(coeffs.shape(), table, true)));
    return ops::block_idct8(ops::mul_const(q, tiled(coeffs.shape(), table, false)));
}

Var rotate(const Var& x, double angle_deg)
{
    const int h = x.value().h(), w = x.value().w();
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Tensor grid({h, w, 2});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const double dx = xx - cx, dy = y - cy;
            grid[(static_cast<std::size_t>(y) * w + xx) * 2] = c * dx + s * dy + cx;
            grid[(static_cast<std::size_t>(y) * w + xx) * 2 + 1] = -s * dx + c * dy + cy;
        }
    return ops::grid_sample_reflect(x, grid);
}

// Solves the 8-parameter homography taking `from` points to `to` points.
std::array<double, 9> homography(const std::array<double, 8>& from, const std::array<double, 8>& to)
{
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = from[2 * i], y = from[2 * i + 1];
        const double u = to[2 * i], v = to[2 * i + 1];
        double* r0 = a[2 * i];
        double* r1 = a[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-12) throw std::runtime_error("perspective: degenerate corners");
        if (piv != col)
            for (int k = 0; k < 9; ++k) std::swap(a[col][k], a[piv][k]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
        }
    }
    std::array<double, 9> hm{};
    for (int i = 0; i < 8; ++i) hm[i] = a[i][8] / a[i][i];
    hm[8] = 1.0;
    return hm;
}

Var perspective(const Var& x, const NoiseSpec& spec)
{
    const int h = x.value().h(), w = x.value().w();
    const double mx = spec.perspective_scale * w / 2.0, my = spec.perspective_scale * h / 2.0;
    const std::array<double, 8> src = {0, 0, double(w - 1), 0, double(w - 1), double(h - 1), 0, double(h - 1)};
    // corners move inward: signs per corner (tl, tr, br, bl)
    static constexpr int sx[4] = {1, -1, -1, 1};
    static constexpr int sy[4] = {1, 1, -1, -1};
    std::array<double, 8> dst{};
    for (int i = 0; i < 4; ++i) {
        dst[2 * i] = src[2 * i] + sx[i] * spec.corners[2 * i] * mx;
        dst[2 * i + 1] = src[2 * i + 1] + sy[i] * spec.corners[2 * i + 1] * my;
    }
    // output pixel p lives in the distorted frame; sample the source at H(p)
    const auto hm = homography(dst, src);
    Tensor grid({h, w, 2});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const double den = hm[6] * xx + hm[7] * y + hm[8];
            grid[(static_cast<std::size_t>(y) * w + xx) * 2] = (hm[0] * xx + hm[1] * y + hm[2]) / den;
            grid[(static_cast<std::size_t>(y) * w + xx) * 2 + 1] = (hm[3] * xx + hm[4] * y + hm[5]) / den;
        }
    return ops::grid_sample_reflect(x, grid);
}

Var gaussian_blur(const Var& x, int kernel, double sigma)
{
    const int c = x.value().c();
    std::vector<double> g(kernel);
    double total = 0.0;
    const double mid = (kernel - 1) / 2.0;
    for (int i = 0; i < kernel; ++i) {
        g[i] = std::exp(-((i - mid) * (i - mid)) / (2.0 * sigma * sigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    Tensor wt({c, 1, kernel, kernel});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < kernel; ++i)
            for (int j = 0; j < kernel; ++j) wt.at(ch, 0, i, j) = g[i] * g[j];
    const Var padded = ops::pad_reflect(x, kernel / 2);
    return ops::depthwise_conv2d(padded, constant(std::move(wt)), Var(), 1, 0);
}

Mat3 saturation_matrix(double f)
{
    Mat3 m{};
    for (int o = 0; o < 3; ++o)
        for (int k = 0; k < 3; ++k) m[o][k] = (o == k ? f : 0.0) + (1.0 - f) * kToYuv[0][k];
    return m;
}

Mat3 hue_matrix(double turns)
{
    const double th = 2.0 * std::numbers::pi * turns;
    const Mat3 rot = {{{1, 0, 0}, {0, std::cos(th), -std::sin(th)}, {0, std::sin(th), std::cos(th)}}};
    return matmul(kToRgb, matmul(rot, kToYuv));
}

Var clamp01(const Var& x) { return ops::clamp(x, 0.0, 1.0); }

Var erase(const Var& x, const NoiseSpec& spec)
{
    const Tensor& v = x.value();
    const int h = v.h(), w = v.w();
    const double area = spec.erase_area * h * w;
    const int eh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * spec.erase_ratio))), 1, h);
    const int ew = std::clamp(static_cast<int>(std::lround(std::sqrt(area / spec.erase_ratio))), 1, w);
    const int y0 = static_cast<int>(std::lround(spec.erase_cy * (h - eh)));
    const int x0 = static_cast<int>(std::lround(spec.erase_cx * (w - ew)));
    Tensor mask(v.shape(), 1.0);
    for (int s = 0; s < v.n(); ++s)
        for (int c = 0; c < v.c(); ++c)
            for (int y = y0; y < y0 + eh; ++y)
                for (int xx = x0; xx < x0 + ew; ++xx) mask.at(s, c, y, xx) = 0.0;
    return ops::mul_const(x, mask);
}

} // namespace

std::string_view noise_name(NoiseKind k)
{
    switch (k) {
    case NoiseKind::JpegCompression: return "JpegCompression";
    case NoiseKind::Brightness: return "Brightness";
    case NoiseKind::Contrast: return "Contrast";
    case NoiseKind::Saturation: return "Saturation";
    case NoiseKind::GaussianBlur: return "GaussianBlur";
    case NoiseKind::GaussianNoise: return "GaussianNoise";
    case NoiseKind::ColorJiggle: return "ColorJiggle";
    case NoiseKind::Posterize: return "Posterize";
    case NoiseKind::RGBShift: return "RGBShift";
    case NoiseKind::Flip: return "Flip";
    case NoiseKind::Rotation: return "Rotation";
    case NoiseKind::RandomErasing: return "RandomErasing";
    case NoiseKind::Perspective: return "Perspective";
    case NoiseKind::RandomResizedCrop: return "RandomResizedCrop";
    case NoiseKind::Identity: return "Identity";
    }
    return "?";
}

std::optional<NoiseKind> noise_from_name(std::string_view name)
{
    for (NoiseKind k : kSuiteKinds)
        if (noise_name(k) == name) return k;
    if (name == "Identity") return NoiseKind::Identity;
    return std::nullopt;
}

bool is_geometric(NoiseKind k)
{
    return k == NoiseKind::Flip || k == NoiseKind::Rotation || k == NoiseKind::RandomErasing ||
           k == NoiseKind::Perspective || k == NoiseKind::RandomResizedCrop;
}

CropWindow crop_window(const NoiseSpec& spec, int height, int width, double min_area_fraction)
{
    const double area = static_cast<double>(height) * width;
    const double target = spec.crop_scale * area;
    int cw = static_cast<int>(std::lround(std::sqrt(target * spec.crop_ratio)));
    int ch = static_cast<int>(std::lround(std::sqrt(target / spec.crop_ratio)));
    cw = std::clamp(cw, 1, width);
    ch = std::clamp(ch, 1, height);
    // Clamping to the frame can shrink the window below the minimum area;
    // widen the free side until the retained area is large enough again.
    const double need = std::ceil(min_area_fraction * area - 1e-9);
    while (static_cast<double>(cw) * ch < need) {
        if (cw < width) {
            cw = std::min(width, static_cast<int>(std::ceil(need / ch)));
        } else {
            ch = std::min(height, static_cast<int>(std::ceil(need / cw)));
        }
    }
    CropWindow win;
    win.height = ch;
    win.width = cw;
    win.y0 = static_cast<int>(std::floor(spec.crop_fy * (height - ch + 1)));
    win.x0 = static_cast<int>(std::floor(spec.crop_fx * (width - cw + 1)));
    win.y0 = std::clamp(win.y0, 0, height - ch);
    win.x0 = std::clamp(win.x0, 0, width - cw);
    return win;
}

NoiseSpec sample_spec(NoiseKind kind, const NoiseRanges& r, NoiseMode mode, Rng& rng)
{
    NoiseSpec s;
    s.kind = kind;
    s.mode = mode;
    auto bound = [&](const Range& range) { return rng.bernoulli(0.5) ? range.hi : range.lo; };
    switch (kind) {
    case NoiseKind::JpegCompression:
        s.quality = mode == NoiseMode::EvalExact
                        ? r.jpeg_min_quality
                        : r.jpeg_min_quality + static_cast<int>(rng.below(101 - r.jpeg_min_quality));
        break;
    case NoiseKind::Brightness: s.factor = bound(r.brightness); break;
    case NoiseKind::Contrast: s.factor = bound(r.contrast); break;
    case NoiseKind::Saturation: s.factor = bound(r.saturation); break;
    case NoiseKind::GaussianBlur:
        s.kernel = r.blur_kernel;
        s.sigma = rng.uniform(r.blur_sigma.lo, r.blur_sigma.hi);
        break;
    case NoiseKind::GaussianNoise: s.std = r.noise_std; break;
    case NoiseKind::ColorJiggle:
        for (int i = 0; i < 3; ++i) s.jiggle[i] = rng.uniform(1.0 - r.jiggle[i], 1.0 + r.jiggle[i]);
        s.jiggle[3] = rng.uniform(-r.jiggle[3], r.jiggle[3]);
        break;
    case NoiseKind::Posterize: s.bits = r.posterize_bits; break;
    case NoiseKind::RGBShift:
        for (double& v : s.shift) v = rng.uniform(-r.rgb_shift, r.rgb_shift);
        break;
    case NoiseKind::Flip: s.flip = rng.bernoulli(r.flip_prob); break;
    case NoiseKind::Rotation: s.angle_deg = rng.uniform(r.rotation_deg.lo, r.rotation_deg.hi); break;
    case NoiseKind::RandomErasing:
        s.erase_area = rng.uniform(r.erase_scale.lo, r.erase_scale.hi);
        s.erase_ratio = rng.uniform(r.erase_ratio.lo, r.erase_ratio.hi);
        s.erase_cy = rng.uniform();
        s.erase_cx = rng.uniform();
        break;
    case NoiseKind::Perspective:
        s.perspective_scale = r.perspective_scale;
        for (double& v : s.corners) v = rng.uniform();
        break;
    case NoiseKind::RandomResizedCrop:
        s.crop_scale = rng.uniform(r.crop_scale.lo, r.crop_scale.hi);
        s.crop_ratio = std::exp(rng.uniform(std::log(r.crop_ratio.lo), std::log(r.crop_ratio.hi)));
        s.crop_fy = rng.uniform();
        s.crop_fx = rng.uniform();
        break;
    case NoiseKind::Identity: break;
    }
    return s;
}

std::vector<NoiseSpec> sample_suite(std::uint64_t seed, NoiseMode mode, const NoiseRanges& ranges)
{
    std::vector<NoiseSpec> out;
    out.reserve(kSuiteSize);
    for (std::size_t i = 0; i < kSuiteKinds.size(); ++i) {
        Rng rng(mix_seed(seed, i));
        out.push_back(sample_spec(kSuiteKinds[i], ranges, mode, rng));
    }
    return out;
}

Var jpeg_surrogate(const Var& x, int quality)
{
    const int h = x.value().h(), w = x.value().w();
    const int ph = (h + 15) / 16 * 16, pw = (w + 15) / 16 * 16;
    Mat3 fwd{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) fwd[i][j] = 255.0 * kToYuv[i][j];
    const Var ycc = ops::mix_channels(ops::pad_replicate_to(x, ph, pw), fwd, {-128.0, 0.0, 0.0});
    const Var y = quantize_planes(ops::slice_channels(ycc, 0, 1), scaled_table(kLumaQ, quality));
    const Var chroma_lo = ops::resize_bilinear(ops::slice_channels(ycc, 1, 2), ph / 2, pw / 2);
    const Var chroma = ops::resize_bilinear(quantize_planes(chroma_lo, scaled_table(kChromaQ, quality)), ph, pw);
    Mat3 inv{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) inv[i][j] = kToRgb[i][j] / 255.0;
    const double off = 128.0 / 255.0;
    const Var rgb = ops::mix_channels(ops::concat_channels(y, chroma), inv, {off, off, off});
    return clamp01(ops::crop(rgb, 0, 0, h, w));
}

Var apply_noise(const NoiseSpec& spec, const Var& x, Rng& rng)
{
    switch (spec.kind) {
    case NoiseKind::Identity: return x;
    case NoiseKind::JpegCompression: return jpeg_surrogate(x, spec.quality);
    case NoiseKind::Brightness: return clamp01(ops::add_scalar(x, spec.factor - 1.0));
    case NoiseKind::Contrast: return clamp01(ops::scale(x, spec.factor));
    case NoiseKind::Saturation: return clamp01(ops::mix_channels(x, saturation_matrix(spec.factor), {0, 0, 0}));
    case NoiseKind::GaussianBlur: return clamp01(gaussian_blur(x, spec.kernel, spec.sigma));
    case NoiseKind::GaussianNoise: {
        Tensor n(x.shape());
        for (double& v : n.vec()) v = spec.std * rng.normal();
        return clamp01(ops::add_const(x, n));
    }
    case NoiseKind::ColorJiggle: {
        Var y = clamp01(ops::add_scalar(x, spec.jiggle[0] - 1.0));
        y = clamp01(ops::scale(y, spec.jiggle[1]));
        y = clamp01(ops::mix_channels(y, saturation_matrix(spec.jiggle[2]), {0, 0, 0}));
        return clamp01(ops::mix_channels(y, hue_matrix(spec.jiggle[3]), {0, 0, 0}));
    }
    case NoiseKind::Posterize: return ops::posterize_ste(x, spec.bits);
    case NoiseKind::RGBShift: {
        Tensor t(x.shape());
        const std::size_t hw = static_cast<std::size_t>(x.value().h()) * x.value().w();
        for (int s = 0; s < x.value().n(); ++s)
            for (int c = 0; c < 3; ++c)
                std::fill_n(t.data() + (static_cast<std::size_t>(s) * 3 + c) * hw, hw, spec.shift[c]);
        return clamp01(ops::add_const(x, t));
    }
    case NoiseKind::Flip: return spec.flip ? ops::flip_horizontal(x) : x;
    case NoiseKind::Rotation: return clamp01(rotate(x, spec.angle_deg));
    case NoiseKind::RandomErasing: return erase(x, spec);
    case NoiseKind::Perspective: return clamp01(perspective(x, spec));
    case NoiseKind::RandomResizedCrop: {
        const int h = x.value().h(), w = x.value().w();
        const CropWindow win = crop_window(spec, h, w);
        return clamp01(ops::resize_bilinear(ops::crop(x, win.y0, win.x0, win.height, win.width), h, w));
    }
    }
    throw std::logic_error("apply_noise: unknown kind");
}

ImageBuffer apply_noise(const NoiseSpec& spec, const ImageBuffer& img, Rng& rng)
{
    if (spec.kind == NoiseKind::JpegCompression && spec.mode == NoiseMode::EvalExact)
        return jpeg_roundtrip(img, spec.quality);
    NoGradGuard guard;
    const Var out = apply_noise(spec, constant(img.tensor()), rng);
    return ImageBuffer::clamped(out.value());
}

namespace {

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }
Range range_from(const nlohmann::json& j) { return Range{j.at(0).get<double>(), j.at(1).get<double>()}; }

} // namespace

void to_json(nlohmann::json& j, const NoiseRanges& r)
{
    j = nlohmann::json{{"jpeg_min_quality", r.jpeg_min_quality},
                       {"brightness", range_json(r.brightness)},
                       {"contrast", range_json(r.contrast)},
                       {"saturation", range_json(r.saturation)},
                       {"blur_kernel", r.blur_kernel},
                       {"blur_sigma", range_json(r.blur_sigma)},
                       {"noise_std", r.noise_std},
                       {"posterize_bits", r.posterize_bits},
                       {"jiggle", r.jiggle},
                       {"rgb_shift", r.rgb_shift},
                       {"flip_prob", r.flip_prob},
                       {"rotation_deg", range_json(r.rotation_deg)},
                       {"erase_scale", range_json(r.erase_scale)},
                       {"erase_ratio", range_json(r.erase_ratio)},
                       {"perspective_scale", r.perspective_scale},
                       {"crop_scale", range_json(r.crop_scale)},
                       {"crop_ratio", range_json(r.crop_ratio)}};
}

void from_json(const nlohmann::json& j, NoiseRanges& r)
{
    NoiseRanges d;
    r.jpeg_min_quality = j.value("jpeg_min_quality", d.jpeg_min_quality);
    r.brightness = j.contains("brightness") ? range_from(j["brightness"]) : d.brightness;
    r.contrast = j.contains("contrast") ? range_from(j["contrast"]) : d.contrast;
    r.saturation = j.contains("saturation") ? range_from(j["saturation"]) : d.saturation;
    r.blur_kernel = j.value("blur_kernel", d.blur_kernel);
    r.blur_sigma = j.contains("blur_sigma") ? range_from(j["blur_sigma"]) : d.blur_sigma;
    r.noise_std = j.value("noise_std", d.noise_std);
    r.posterize_bits = j.value("posterize_bits", d.posterize_bits);
    r.jiggle = j.value("jiggle", d.jiggle);
    r.rgb_shift = j.value("rgb_shift", d.rgb_shift);
    r.flip_prob = j.value("flip_prob", d.flip_prob);
    r.rotation_deg = j.contains("rotation_deg") ? range_from(j["rotation_deg"]) : d.rotation_deg;
    r.erase_scale = j.contains("erase_scale") ? range_from(j["erase_scale"]) : d.erase_scale;
    r.erase_ratio = j.contains("erase_ratio") ? range_from(j["erase_ratio"]) : d.erase_ratio;
    r.perspective_scale = j.value("perspective_scale", d.perspective_scale);
    r.crop_scale = j.contains("crop_scale") ? range_from(j["crop_scale"]) : d.crop_scale;
    r.crop_ratio = j.contains("crop_ratio") ? range_from(j["crop_ratio"]) : d.crop_ratio;
}

void to_json(nlohmann::json& j, const NoiseSpec& s)
{
    j = nlohmann::json{{"kind", noise_name(s.kind)},
                       {"mode", s.mode == NoiseMode::EvalExact ? "eval" : "train"}};
    switch (s.kind) {
    case NoiseKind::JpegCompression: j["quality"] = s.quality; break;
    case NoiseKind::Brightness:
    case NoiseKind::Contrast:
    case NoiseKind::Saturation: j["factor"] = s.factor; break;
    case NoiseKind::GaussianBlur:
        j["kernel"] = s.kernel;
        j["sigma"] = s.sigma;
        break;
    case NoiseKind::GaussianNoise: j["std"] = s.std; break;
    case NoiseKind::ColorJiggle: j["jiggle"] = s.jiggle; break;
    case NoiseKind::Posterize: j["bits"] = s.bits; break;
    case NoiseKind::RGBShift: j["shift"] = s.shift; break;
    case NoiseKind::Flip: j["flip"] = s.flip; break;
    case NoiseKind::Rotation: j["angle_deg"] = s.angle_deg; break;
    case NoiseKind::RandomErasing:
        j["erase"] = {s.erase_area, s.erase_ratio, s.erase_cy, s.erase_cx};
        break;
    case NoiseKind::Perspective:
        j["scale"] = s.perspective_scale;
        j["corners"] = s.corners;
        break;
    case NoiseKind::RandomResizedCrop:
        j["crop"] = {s.crop_scale, s.crop_ratio, s.crop_fy, s.crop_fx};
        break;
    case NoiseKind::Identity: break;
    }
}

void from_json(const nlohmann::json& j, NoiseSpec& s)
{
    const auto kind = noise_from_name(j.at("kind").get<std::string>());
    if (!kind) throw std::invalid_argument("unknown noise kind: " + j.at("kind").get<std::string>());
    s = NoiseSpec{};
    s.kind = *kind;
    s.mode = j.value("mode", std::string("eval")) == "train" ? NoiseMode::TrainDifferentiable : NoiseMode::EvalExact;
    s.quality = j.value("quality", s.quality);
    s.factor = j.value("factor", s.factor);
    s.kernel = j.value("kernel", s.kernel);
    s.sigma = j.value("sigma", s.sigma);
    s.std = j.value("std", s.std);
    s.jiggle = j.value("jiggle", s.jiggle);
    s.bits = j.value("bits", s.bits);
    s.shift = j.value("shift", s.shift);
    s.flip = j.value("flip", s.flip);
    s.angle_deg = j.value("angle_deg", s.angle_deg);
    if (j.contains("erase")) {
        const auto& e = j["erase"];
        s.erase_area = e.at(0);
        s.erase_ratio = e.at(1);
        s.erase_cy = e.at(2);
        s.erase_cx = e.at(3);
    }
    s.perspective_scale = j.value("scale", s.perspective_scale);
    s.corners = j.value("corners", s.corners);
    if (j.contains("crop")) {
        const auto& c = j["crop"];
        s.crop_scale = c.at(0);
        s.crop_ratio = c.at(1);
        s.crop_fy = c.at(2);
        s.crop_fx = c.at(3);
    }
}

} // namespace wmlab
