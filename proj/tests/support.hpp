#pragma once

#include "wmlab/autograd.hpp"
#include "wmlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace wmlab::testing {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(s));
    for (double& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

struct GradReport {
    int checked = 0;
    int passed = 0;
    double worst = 0.0;
};

inline double relative_error(double a, double b, double floor)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares the gradient of sum(f(x) * seed) with central differences at up to
/// `samples` coordinates (all when samples <= 0).
inline GradReport check_gradient(const std::function<Var(const Var&)>& f, const Tensor& x, double h = 1e-6,
                                 double tol = 1e-5, int samples = 0, std::uint64_t seed = 1, double floor = 1e-7)
{
    Rng rng(seed);
    Var xv(x, true);
    const Var y = f(xv);
    const Tensor weights = random_tensor(y.shape(), rng, 0.5, 1.5);
    y.backward(weights);
    const Tensor analytic = xv.grad();

    auto eval = [&](const Tensor& t) {
        NoGradGuard guard;
        const Tensor out = f(constant(t)).value();
        double s = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * weights[i];
        return s;
    };
    std::vector<std::size_t> coords(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (samples > 0 && static_cast<std::size_t>(samples) < coords.size()) {
        for (std::size_t i = coords.size() - 1; i > 0; --i) std::swap(coords[i], coords[rng.below(i + 1)]);
        coords.resize(static_cast<std::size_t>(samples));
    }
    GradReport r;
    for (std::size_t i : coords) {
        Tensor p = x, m = x;
        p[i] += h;
        m[i] -= h;
        const double numeric = (eval(p) - eval(m)) / (2.0 * h);
        const double a = analytic.empty() ? 0.0 : analytic[i];
        const double err = relative_error(a, numeric, floor);
        ++r.checked;
        if (err <= tol) ++r.passed;
        r.worst = std::max(r.worst, err);
    }
    return r;
}

} // namespace wmlab::testing
