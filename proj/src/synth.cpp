#include "wmlab/synth.hpp"

#include "wmlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace wmlab {

ImageBuffer synthetic_image(int height, int width, std::uint64_t seed)
{
    Rng rng(mix_seed(seed, 0x5EED));
    ImageBuffer img(height, width);
    const double two_pi = 2.0 * std::numbers::pi;

    // low-frequency colour field
    struct Wave {
        double fy, fx, phase, amp;
    };
    std::array<std::vector<Wave>, 3> waves;
    std::array<double, 3> base{};
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.25, 0.75);
        for (int i = 0; i < 4; ++i)
            waves[c].push_back({rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(0, two_pi), rng.uniform(0.03, 0.12)});
    }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double v = static_cast<double>(y) / height, u = static_cast<double>(x) / width;
            for (int c = 0; c < 3; ++c) {
                double s = base[c];
                for (const Wave& wv : waves[c]) s += wv.amp * std::cos(two_pi * (wv.fy * v + wv.fx * u) + wv.phase);
                img.at(c, y, x) = s;
            }
        }

    // soft-edged ellipses
    const int shapes = 3 + static_cast<int>(rng.below(4));
    for (int k = 0; k < shapes; ++k) {
        const double cy = rng.uniform(0.1, 0.9) * height, cx = rng.uniform(0.1, 0.9) * width;
        const double ry = rng.uniform(0.08, 0.3) * height, rx = rng.uniform(0.08, 0.3) * width;
        const double edge = rng.uniform(0.02, 0.15);
        const Rgb col{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        const double opacity = rng.uniform(0.5, 0.9);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                const double r = std::sqrt(dy * dy + dx * dx);
                const double a = opacity * std::clamp((1.0 - r) / edge, 0.0, 1.0);
                if (a <= 0.0) continue;
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1.0 - a) * img.at(c, y, x) + a * col[c];
            }
    }

    // fine texture: box-smoothed noise
    Tensor noise({height, width});
    for (double& v : noise.vec()) v = rng.normal();
    const double amp = rng.uniform(0.01, 0.04);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            int cnt = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    acc += noise[static_cast<std::size_t>(yy) * width + xx];
                    ++cnt;
                }
            const double t = amp * acc / std::sqrt(static_cast<double>(cnt));
            for (int c = 0; c < 3; ++c) img.at(c, y, x) += t;
        }

    Tensor t = img.tensor();
    for (double& v : t.vec()) v = std::clamp(v, 0.02, 0.98);
    return ImageBuffer(std::move(t));
}

std::vector<std::filesystem::path> write_synthetic_set(const std::filesystem::path& dir, int count, int height,
                                                       int width, std::uint64_t seed)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> out;
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%03d.png", i);
        const auto path = dir / name;
        save_image(synthetic_image(height, width, mix_seed(seed, static_cast<std::uint64_t>(i))), path);
        out.push_back(path);
    }
    return out;
}

} // namespace wmlab
