#include "wmlab/autograd.hpp"

#include <opencv2/core.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <unordered_set>

namespace wmlab {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

void accum(const NodePtr& p, const Tensor& g)
{
    if (!p->requires_grad) return;
    Tensor& dst = p->grad_buffer();
    const double* s = g.data();
    double* d = dst.data();
    const std::size_t n = dst.numel();
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

template <typename F>
Var unary(const Var& x, F&& f, std::function<void(Node&)> bw)
{
    Tensor out(x.shape());
    const Tensor& xv = x.value();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
    return Var::make(std::move(out), {x}, std::move(bw));
}

} // namespace

Tensor& Node::grad_buffer()
{
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad()
{
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var Var::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward)
{
    Var v(std::move(value));
    if (!g_grad_enabled) return v;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return v;
    v.node_->requires_grad = true;
    v.node_->parents.reserve(parents.size());
    for (auto& p : parents) v.node_->parents.push_back(p.node_);
    v.node_->backward = std::move(backward);
    return v;
}

void Var::backward() const
{
    if (node_->value.numel() != 1) throw std::logic_error("backward() without seed requires a scalar");
    backward(Tensor(node_->value.shape(), 1.0));
}

void Var::backward(const Tensor& seed) const
{
    if (!node_->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    accum(node_, seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // interior grads are transient; leaves keep theirs for the optimizer
    for (Node* n : order) {
        if (n->backward) n->grad = Tensor();
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var constant(Tensor t) { return Var(std::move(t), false); }

namespace ops {

Var add(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        accum(self.parents[0], self.grad);
        accum(self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        accum(self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor& d = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) {
            Tensor& d = pa->grad_buffer();
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            Tensor& d = pb->grad_buffer();
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * pa->value[i];
        }
    });
}

Var add_scalar(const Var& a, double s)
{
    return unary(a, [s](double v) { return v + s; }, [](Node& self) { accum(self.parents[0], self.grad); });
}

Var scale(const Var& a, double s)
{
    return unary(a, [s](double v) { return v * s; }, [s](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += s * self.grad[i];
    });
}

Var square(const Var& a)
{
    return unary(a, [](double v) { return v * v; }, [](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& d = p->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += 2.0 * p->value[i] * self.grad[i];
    });
}

namespace {

// number of elements per channel slab and number of slabs for a [N,C,...] tensor
struct ChannelLayout {
    int n, c;
    std::size_t inner;
};

ChannelLayout channel_layout(const Tensor& x)
{
    ChannelLayout l{x.dim(0), x.dim(1), 1};
    for (std::size_t i = 2; i < x.rank(); ++i) l.inner *= static_cast<std::size_t>(x.dim(i));
    return l;
}

} // namespace

Var mul_channel(const Var& x, const Var& g)
{
    const auto l = channel_layout(x.value());
    if (static_cast<int>(g.value().numel()) != l.c) throw std::invalid_argument("mul_channel: size mismatch");
    Tensor out(x.shape());
    for (int s = 0; s < l.n; ++s)
        for (int c = 0; c < l.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(s) * l.c + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) out[base + i] = x.value()[base + i] * g.value()[c];
        }
    return Var::make(std::move(out), {x, g}, [l](Node& self) {
        const auto& px = self.parents[0];
        const auto& pg = self.parents[1];
        for (int s = 0; s < l.n; ++s)
            for (int c = 0; c < l.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(s) * l.c + c) * l.inner;
                double acc = 0.0;
                for (std::size_t i = 0; i < l.inner; ++i) {
                    if (px->requires_grad) px->grad_buffer()[base + i] += self.grad[base + i] * pg->value[c];
                    acc += self.grad[base + i] * px->value[base + i];
                }
                if (pg->requires_grad) pg->grad_buffer()[c] += acc;
            }
    });
}

Var add_channel(const Var& x, const Var& b)
{
    const auto l = channel_layout(x.value());
    if (static_cast<int>(b.value().numel()) != l.c) throw std::invalid_argument("add_channel: size mismatch");
    Tensor out(x.shape());
    for (int s = 0; s < l.n; ++s)
        for (int c = 0; c < l.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(s) * l.c + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) out[base + i] = x.value()[base + i] + b.value()[c];
        }
    return Var::make(std::move(out), {x, b}, [l](Node& self) {
        accum(self.parents[0], self.grad);
        const auto& pb = self.parents[1];
        if (!pb->requires_grad) return;
        for (int s = 0; s < l.n; ++s)
            for (int c = 0; c < l.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(s) * l.c + c) * l.inner;
                double acc = 0.0;
                for (std::size_t i = 0; i < l.inner; ++i) acc += self.grad[base + i];
                pb->grad_buffer()[c] += acc;
            }
    });
}

Var mul_scalar_var(const Var& a, const Var& s)
{
    if (s.value().numel() != 1) throw std::invalid_argument("mul_scalar_var: scalar expected");
    const double sv = s.value()[0];
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * sv;
    return Var::make(std::move(out), {a, s}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& ps = self.parents[1];
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            if (pa->requires_grad) pa->grad_buffer()[i] += self.grad[i] * ps->value[0];
            acc += self.grad[i] * pa->value[i];
        }
        if (ps->requires_grad) ps->grad_buffer()[0] += acc;
    });
}

namespace {

template <typename D>
std::function<void(Node&)> pointwise_backward(D deriv)
{
    return [deriv](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& d = p->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * deriv(p->value[i], self.value[i]);
    };
}

} // namespace

Var relu(const Var& x)
{
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 pointwise_backward([](double in, double) { return in > 0.0 ? 1.0 : 0.0; }));
}

Var leaky_relu(const Var& x, double slope)
{
    return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                 pointwise_backward([slope](double in, double) { return in > 0.0 ? 1.0 : slope; }));
}

Var gelu(const Var& x)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
                 pointwise_backward([](double v, double) {
                     return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
                 }));
}

Var tanh(const Var& x)
{
    return unary(x, [](double v) { return std::tanh(v); },
                 pointwise_backward([](double, double out) { return 1.0 - out * out; }));
}

Var sigmoid(const Var& x)
{
    return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                 pointwise_backward([](double, double out) { return out * (1.0 - out); }));
}

Var clamp(const Var& x, double lo, double hi)
{
    return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                 pointwise_backward([lo, hi](double in, double) { return (in > lo && in < hi) ? 1.0 : 0.0; }));
}

Var sum(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().vec()) s += v;
    return Var::make(Tensor({1}, s), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& d = p->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g;
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var mean_per_sample(const Var& x)
{
    const int n = x.value().dim(0);
    const std::size_t per = x.value().numel() / static_cast<std::size_t>(n);
    Tensor out({n});
    for (int s = 0; s < n; ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) acc += x.value()[s * per + i];
        out[s] = acc / static_cast<double>(per);
    }
    return Var::make(std::move(out), {x}, [n, per](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& d = p->grad_buffer();
        for (int s = 0; s < n; ++s) {
            const double g = self.grad[s] / static_cast<double>(per);
            for (std::size_t i = 0; i < per; ++i) d[s * per + i] += g;
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b)
{
    const int n = x.value().dim(0);
    const int in = static_cast<int>(x.value().numel() / n);
    const int out = w.value().dim(0);
    if (w.value().dim(1) != in) throw std::invalid_argument("linear: input size mismatch");
    Tensor y({n, out});
    kernels::gemm(false, true, n, out, in, 1.0, x.value().data(), in, w.value().data(), in, 0.0, y.data(), out);
    if (b.defined()) {
        for (int s = 0; s < n; ++s)
            for (int o = 0; o < out; ++o) y[s * out + o] += b.value()[o];
    }
    std::vector<Var> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return Var::make(std::move(y), parents, [n, in, out](Node& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        if (px->requires_grad) {
            kernels::gemm(false, false, n, in, out, 1.0, self.grad.data(), out, pw->value.data(), in, 1.0,
                          px->grad_buffer().data(), in);
        }
        if (pw->requires_grad) {
            kernels::gemm(true, false, out, in, n, 1.0, self.grad.data(), out, px->value.data(), in, 1.0,
                          pw->grad_buffer().data(), in);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Tensor& db = self.parents[2]->grad_buffer();
            for (int s = 0; s < n; ++s)
                for (int o = 0; o < out; ++o) db[o] += self.grad[s * out + o];
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad)
{
    const kernels::ConvGeom g{stride, pad};
    Tensor y = kernels::conv2d_forward(x.value(), w.value(), b.defined() ? b.value() : Tensor(), g);
    std::vector<Var> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return Var::make(std::move(y), parents, [g](Node& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        Tensor* db = (self.parents.size() > 2 && self.parents[2]->requires_grad) ? &self.parents[2]->grad_buffer()
                                                                                  : nullptr;
        kernels::conv2d_backward(px->value, pw->value, self.grad, g, px->requires_grad ? &px->grad_buffer() : nullptr,
                                 pw->requires_grad ? &pw->grad_buffer() : nullptr, db);
    });
}

Var depthwise_conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad)
{
    const kernels::ConvGeom g{stride, pad};
    Tensor y = kernels::depthwise_forward(x.value(), w.value(), b.defined() ? b.value() : Tensor(), g);
    std::vector<Var> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return Var::make(std::move(y), parents, [g](Node& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        Tensor* db = (self.parents.size() > 2 && self.parents[2]->requires_grad) ? &self.parents[2]->grad_buffer()
                                                                                  : nullptr;
        kernels::depthwise_backward(px->value, pw->value, self.grad, g,
                                    px->requires_grad ? &px->grad_buffer() : nullptr,
                                    pw->requires_grad ? &pw->grad_buffer() : nullptr, db);
    });
}

Var instance_norm(const Var& x, double eps)
{
    const Tensor& xv = x.value();
    const int planes = xv.n() * xv.c();
    const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
    Tensor y(xv.shape());
    std::vector<double> inv_std(planes);
    for (int p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * hw;
        double m = 0.0;
        for (std::size_t i = 0; i < hw; ++i) m += src[i];
        m /= static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t i = 0; i < hw; ++i) var += (src[i] - m) * (src[i] - m);
        var /= static_cast<double>(hw);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[p] = is;
        double* dst = y.data() + p * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] = (src[i] - m) * is;
    }
    return Var::make(std::move(y), {x}, [planes, hw, inv_std = std::move(inv_std)](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& dx = px->grad_buffer();
        for (int p = 0; p < planes; ++p) {
            const double* g = self.grad.data() + p * hw;
            const double* yh = self.value.data() + p * hw;
            double mg = 0.0, mgy = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                mg += g[i];
                mgy += g[i] * yh[i];
            }
            mg /= static_cast<double>(hw);
            mgy /= static_cast<double>(hw);
            double* d = dx.data() + p * hw;
            for (std::size_t i = 0; i < hw; ++i) d[i] += inv_std[p] * (g[i] - mg - yh[i] * mgy);
        }
    });
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps)
{
    const Tensor& xv = x.value();
    const int n = xv.dim(0), c = xv.dim(1);
    const std::size_t inner = xv.numel() / (static_cast<std::size_t>(n) * c);
    Tensor xhat(xv.shape());
    Tensor y(xv.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(n) * inner);
    for (int s = 0; s < n; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * c * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            double m = 0.0;
            for (int ch = 0; ch < c; ++ch) m += xv[base + ch * inner + i];
            m /= c;
            double var = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double d = xv[base + ch * inner + i] - m;
                var += d * d;
            }
            var /= c;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[s * inner + i] = is;
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t k = base + ch * inner + i;
                xhat[k] = (xv[k] - m) * is;
                y[k] = xhat[k] * gamma.value()[ch] + beta.value()[ch];
            }
        }
    }
    return Var::make(std::move(y), {x, gamma, beta},
                     [n, c, inner, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                         const auto& px = self.parents[0];
                         const auto& pg = self.parents[1];
                         const auto& pb = self.parents[2];
                         std::vector<double> dxh(c);
                         for (int s = 0; s < n; ++s) {
                             const std::size_t base = static_cast<std::size_t>(s) * c * inner;
                             for (std::size_t i = 0; i < inner; ++i) {
                                 double m1 = 0.0, m2 = 0.0;
                                 for (int ch = 0; ch < c; ++ch) {
                                     const std::size_t k = base + ch * inner + i;
                                     const double g = self.grad[k];
                                     if (pg->requires_grad) pg->grad_buffer()[ch] += g * xhat[k];
                                     if (pb->requires_grad) pb->grad_buffer()[ch] += g;
                                     dxh[ch] = g * pg->value[ch];
                                     m1 += dxh[ch];
                                     m2 += dxh[ch] * xhat[k];
                                 }
                                 if (!px->requires_grad) continue;
                                 m1 /= c;
                                 m2 /= c;
                                 const double is = inv_std[s * inner + i];
                                 Tensor& dx = px->grad_buffer();
                                 for (int ch = 0; ch < c; ++ch) {
                                     const std::size_t k = base + ch * inner + i;
                                     dx[k] += is * (dxh[ch] - m1 - xhat[k] * m2);
                                 }
                             }
                         }
                     });
}

Var normalize_channels(const Var& x, double eps)
{
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw std::invalid_argument("normalize_channels: [N,C,H,W] expected");
    const int n = xv.n(), c = xv.c();
    const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
    Tensor y(xv.shape());
    auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * hw);
    for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < hw; ++i) {
            const double* px = xv.data() + static_cast<std::size_t>(s) * c * hw + i;
            double ss = eps;
            for (int ch = 0; ch < c; ++ch) ss += px[ch * hw] * px[ch * hw];
            const double r = 1.0 / std::sqrt(ss);
            (*inv)[s * hw + i] = r;
            double* py = y.data() + static_cast<std::size_t>(s) * c * hw + i;
            for (int ch = 0; ch < c; ++ch) py[ch * hw] = px[ch * hw] * r;
        }
    return Var::make(std::move(y), {x}, [n, c, hw, inv](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (int s = 0; s < n; ++s)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t base = static_cast<std::size_t>(s) * c * hw + i;
                const double r = (*inv)[s * hw + i];
                double dot = 0.0;
                for (int ch = 0; ch < c; ++ch) dot += self.grad[base + ch * hw] * self.value[base + ch * hw];
                for (int ch = 0; ch < c; ++ch)
                    d[base + ch * hw] += r * (self.grad[base + ch * hw] - self.value[base + ch * hw] * dot);
            }
    });
}

Var reshape(const Var& x, Shape s)
{
    Tensor y = x.value().reshaped(std::move(s));
    return Var::make(std::move(y), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& d = p->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
    });
}

Var concat_channels(const Var& a, const Var& b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w())
        throw std::invalid_argument("concat_channels: incompatible shapes");
    const int n = av.n(), ca = av.c(), cb = bv.c();
    const std::size_t hw = static_cast<std::size_t>(av.h()) * av.w();
    Tensor y({n, ca + cb, av.h(), av.w()});
    for (int s = 0; s < n; ++s) {
        std::copy_n(av.data() + s * ca * hw, ca * hw, y.data() + s * (ca + cb) * hw);
        std::copy_n(bv.data() + s * cb * hw, cb * hw, y.data() + (s * (ca + cb) + ca) * hw);
    }
    return Var::make(std::move(y), {a, b}, [n, ca, cb, hw](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        for (int s = 0; s < n; ++s) {
            const double* g = self.grad.data() + s * (ca + cb) * hw;
            if (pa->requires_grad) {
                double* d = pa->grad_buffer().data() + s * ca * hw;
                for (std::size_t i = 0; i < ca * hw; ++i) d[i] += g[i];
            }
            if (pb->requires_grad) {
                double* d = pb->grad_buffer().data() + s * cb * hw;
                for (std::size_t i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
            }
        }
    });
}

Var slice_channels(const Var& x, int first, int count)
{
    const Tensor& xv = x.value();
    if (first < 0 || count < 1 || first + count > xv.c()) throw std::invalid_argument("slice_channels: bad range");
    const int n = xv.n(), c = xv.c();
    const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
    Tensor y({n, count, xv.h(), xv.w()});
    for (int s = 0; s < n; ++s)
        std::copy_n(xv.data() + (static_cast<std::size_t>(s) * c + first) * hw, count * hw,
                    y.data() + static_cast<std::size_t>(s) * count * hw);
    return Var::make(std::move(y), {x}, [n, c, first, count, hw](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (int s = 0; s < n; ++s) {
            double* dst = d.data() + (static_cast<std::size_t>(s) * c + first) * hw;
            const double* g = self.grad.data() + static_cast<std::size_t>(s) * count * hw;
            for (std::size_t i = 0; i < count * hw; ++i) dst[i] += g[i];
        }
    });
}

Var global_avg_pool(const Var& x)
{
    const Tensor& xv = x.value();
    const int n = xv.n(), c = xv.c();
    const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
    Tensor y({n, c});
    for (int p = 0; p < n * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += xv[p * hw + i];
        y[p] = acc / static_cast<double>(hw);
    }
    return Var::make(std::move(y), {x}, [n, c, hw](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (int p = 0; p < n * c; ++p) {
            const double g = self.grad[p] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) d[p * hw + i] += g;
        }
    });
}

Var upsample_nearest(const Var& x, int factor)
{
    const Tensor& xv = x.value();
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    Tensor y({n, c, h * factor, w * factor});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < h * factor; ++yy)
                for (int xx = 0; xx < w * factor; ++xx) y.at(s, ch, yy, xx) = xv.at(s, ch, yy / factor, xx / factor);
    return Var::make(std::move(y), {x}, [factor](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        const Tensor& g = self.grad;
        for (int s = 0; s < g.n(); ++s)
            for (int ch = 0; ch < g.c(); ++ch)
                for (int yy = 0; yy < g.h(); ++yy)
                    for (int xx = 0; xx < g.w(); ++xx) d.at(s, ch, yy / factor, xx / factor) += g.at(s, ch, yy, xx);
    });
}

Var pad_center(const Var& x, int height, int width)
{
    const Tensor& xv = x.value();
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    if (h > height || w > width) throw std::invalid_argument("pad_center: target smaller than input");
    const int oy = (height - h) / 2, ox = (width - w) / 2;
    Tensor y({n, c, height, width});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) y.at(s, ch, yy + oy, xx + ox) = xv.at(s, ch, yy, xx);
    return Var::make(std::move(y), {x}, [oy, ox](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (int s = 0; s < d.n(); ++s)
            for (int ch = 0; ch < d.c(); ++ch)
                for (int yy = 0; yy < d.h(); ++yy)
                    for (int xx = 0; xx < d.w(); ++xx) d.at(s, ch, yy, xx) += self.grad.at(s, ch, yy + oy, xx + ox);
    });
}

Var pad_reflect(const Var& x, int pad)
{
    const Tensor& xv = x.value();
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    if (pad >= h || pad >= w) throw std::invalid_argument("pad_reflect: pad too large");
    auto refl = [](int i, int size) {
        if (i < 0) return -i;
        if (i >= size) return 2 * size - 2 - i;
        return i;
    };
    const int oh = h + 2 * pad, ow = w + 2 * pad;
    Tensor y({n, c, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx)
                    y.at(s, ch, yy, xx) = xv.at(s, ch, refl(yy - pad, h), refl(xx - pad, w));
    return Var::make(std::move(y), {x}, [pad, refl](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        const Tensor& g = self.grad;
        for (int s = 0; s < g.n(); ++s)
            for (int ch = 0; ch < g.c(); ++ch)
                for (int yy = 0; yy < g.h(); ++yy)
                    for (int xx = 0; xx < g.w(); ++xx)
                        d.at(s, ch, refl(yy - pad, d.h()), refl(xx - pad, d.w())) += g.at(s, ch, yy, xx);
    });
}

Var pad_replicate_to(const Var& x, int height, int width)
{
    const Tensor& xv = x.value();
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    if (height < h || width < w) throw std::invalid_argument("pad_replicate_to: target smaller than input");
    if (height == h && width == w) return x;
    Tensor y({n, c, height, width});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < height; ++yy)
                for (int xx = 0; xx < width; ++xx)
                    y.at(s, ch, yy, xx) = xv.at(s, ch, std::min(yy, h - 1), std::min(xx, w - 1));
    return Var::make(std::move(y), {x}, [](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        const Tensor& g = self.grad;
        for (int s = 0; s < g.n(); ++s)
            for (int ch = 0; ch < g.c(); ++ch)
                for (int yy = 0; yy < g.h(); ++yy)
                    for (int xx = 0; xx < g.w(); ++xx)
                        d.at(s, ch, std::min(yy, d.h() - 1), std::min(xx, d.w() - 1)) += g.at(s, ch, yy, xx);
    });
}

Var crop(const Var& x, int y0, int x0, int height, int width)
{
    const Tensor& xv = x.value();
    if (y0 < 0 || x0 < 0 || y0 + height > xv.h() || x0 + width > xv.w())
        throw std::invalid_argument("crop: window outside image");
    const int n = xv.n(), c = xv.c();
    Tensor y({n, c, height, width});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < height; ++yy)
                for (int xx = 0; xx < width; ++xx) y.at(s, ch, yy, xx) = xv.at(s, ch, yy + y0, xx + x0);
    return Var::make(std::move(y), {x}, [y0, x0](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        const Tensor& g = self.grad;
        for (int s = 0; s < g.n(); ++s)
            for (int ch = 0; ch < g.c(); ++ch)
                for (int yy = 0; yy < g.h(); ++yy)
                    for (int xx = 0; xx < g.w(); ++xx) d.at(s, ch, yy + y0, xx + x0) += g.at(s, ch, yy, xx);
    });
}

Var flip_horizontal(const Var& x)
{
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    const int w = xv.w();
    const std::size_t rows = xv.numel() / static_cast<std::size_t>(w);
    for (std::size_t r = 0; r < rows; ++r)
        for (int i = 0; i < w; ++i) y[r * w + i] = xv[r * w + (w - 1 - i)];
    return Var::make(std::move(y), {x}, [rows, w](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (int i = 0; i < w; ++i) d[r * w + (w - 1 - i)] += self.grad[r * w + i];
    });
}

Var slice_batch(const Var& x, int index)
{
    Tensor y = x.value().sample(index);
    const std::size_t per = y.numel();
    return Var::make(std::move(y), {x}, [index, per](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        double* d = px->grad_buffer().data() + static_cast<std::size_t>(index) * per;
        for (std::size_t i = 0; i < per; ++i) d[i] += self.grad[i];
    });
}

Var stack_batch(const std::vector<Var>& xs)
{
    if (xs.empty()) throw std::invalid_argument("stack_batch: empty list");
    Shape s = xs.front().shape();
    int total = 0;
    for (const auto& v : xs) {
        Shape t = v.shape();
        if (t.size() != s.size() || !std::equal(t.begin() + 1, t.end(), s.begin() + 1))
            throw std::invalid_argument("stack_batch: shape mismatch");
        total += t[0];
    }
    s[0] = total;
    Tensor y(s);
    std::size_t off = 0;
    for (const auto& v : xs) {
        std::copy(v.value().vec().begin(), v.value().vec().end(), y.vec().begin() + static_cast<std::ptrdiff_t>(off));
        off += v.value().numel();
    }
    return Var::make(std::move(y), xs, [](Node& self) {
        std::size_t o = 0;
        for (const auto& p : self.parents) {
            const std::size_t m = p->value.numel();
            if (p->requires_grad) {
                double* d = p->grad_buffer().data();
                for (std::size_t i = 0; i < m; ++i) d[i] += self.grad[o + i];
            }
            o += m;
        }
    });
}

Var resize_bilinear(const Var& x, int height, int width)
{
    const Tensor& xv = x.value();
    if (xv.h() == height && xv.w() == width) return x;
    auto ay = std::make_shared<ResampleAxis>(bilinear_axis(xv.h(), height));
    auto ax = std::make_shared<ResampleAxis>(bilinear_axis(xv.w(), width));
    Tensor y = resample_apply(xv, *ay, *ax);
    return Var::make(std::move(y), {x}, [ay, ax](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        accum(px, resample_adjoint(self.grad, *ay, *ax));
    });
}

namespace {

double reflect_coord(double c, int size)
{
    if (size == 1) return 0.0;
    const double period = 2.0 * (size - 1);
    c = std::fmod(std::abs(c), period);
    if (c > size - 1) c = period - c;
    return c;
}

struct Tap {
    int y0, x0, y1, x1;
    double wy, wx;
};

Tap make_tap(double sx, double sy, int h, int w)
{
    sx = reflect_coord(sx, w);
    sy = reflect_coord(sy, h);
    Tap t;
    t.x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
    t.y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.wx = sx - t.x0;
    t.wy = sy - t.y0;
    return t;
}

} // namespace

Var grid_sample_reflect(const Var& x, const Tensor& grid)
{
    const Tensor& xv = x.value();
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    const int oh = grid.dim(0), ow = grid.dim(1);
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(oh) * ow);
    for (int i = 0; i < oh * ow; ++i) (*taps)[i] = make_tap(grid[2 * i], grid[2 * i + 1], h, w);
    Tensor y({n, c, oh, ow});
    for (int p = 0; p < n * c; ++p) {
        const double* src = xv.data() + static_cast<std::size_t>(p) * h * w;
        double* dst = y.data() + static_cast<std::size_t>(p) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) {
            const Tap& t = (*taps)[i];
            const double top = (1 - t.wx) * src[t.y0 * w + t.x0] + t.wx * src[t.y0 * w + t.x1];
            const double bot = (1 - t.wx) * src[t.y1 * w + t.x0] + t.wx * src[t.y1 * w + t.x1];
            dst[i] = (1 - t.wy) * top + t.wy * bot;
        }
    }
    return Var::make(std::move(y), {x}, [taps, n, c, h, w, oh, ow](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (int p = 0; p < n * c; ++p) {
            double* dst = d.data() + static_cast<std::size_t>(p) * h * w;
            const double* g = self.grad.data() + static_cast<std::size_t>(p) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) {
                const Tap& t = (*taps)[i];
                dst[t.y0 * w + t.x0] += g[i] * (1 - t.wy) * (1 - t.wx);
                dst[t.y0 * w + t.x1] += g[i] * (1 - t.wy) * t.wx;
                dst[t.y1 * w + t.x0] += g[i] * t.wy * (1 - t.wx);
                dst[t.y1 * w + t.x1] += g[i] * t.wy * t.wx;
            }
        }
    });
}

Var mix_channels(const Var& x, const std::array<std::array<double, 3>, 3>& m, const std::array<double, 3>& offset)
{
    const Tensor& xv = x.value();
    if (xv.c() != 3) throw std::invalid_argument("mix_channels: 3-channel input expected");
    const int n = xv.n();
    const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
    Tensor y(xv.shape());
    for (int s = 0; s < n; ++s) {
        const double* src = xv.data() + s * 3 * hw;
        double* dst = y.data() + s * 3 * hw;
        for (int o = 0; o < 3; ++o)
            for (std::size_t i = 0; i < hw; ++i)
                dst[o * hw + i] = m[o][0] * src[i] + m[o][1] * src[hw + i] + m[o][2] * src[2 * hw + i] + offset[o];
    }
    return Var::make(std::move(y), {x}, [m, n, hw](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (int s = 0; s < n; ++s) {
            const double* g = self.grad.data() + s * 3 * hw;
            double* dst = d.data() + s * 3 * hw;
            for (int k = 0; k < 3; ++k)
                for (std::size_t i = 0; i < hw; ++i)
                    dst[k * hw + i] += m[0][k] * g[i] + m[1][k] * g[hw + i] + m[2][k] * g[2 * hw + i];
        }
    });
}

Var mul_const(const Var& x, const Tensor& t)
{
    require_same_shape(x.value(), t, "mul_const");
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] * t[i];
    return Var::make(std::move(y), {x}, [t](Node& self) {
        const auto& px = self.parents[0];
        if (!px->requires_grad) return;
        Tensor& d = px->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * t[i];
    });
}

Var add_const(const Var& x, const Tensor& t)
{
    require_same_shape(x.value(), t, "add_const");
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] + t[i];
    return Var::make(std::move(y), {x}, [](Node& self) { accum(self.parents[0], self.grad); });
}

Var posterize_ste(const Var& x, int bits)
{
    const int mask = (0xFF << (8 - bits)) & 0xFF;
    return unary(
        x,
        [mask](double v) {
            const int q = static_cast<int>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 1e-9));
            return static_cast<double>(std::min(q, 255) & mask) / 255.0;
        },
        [](Node& self) { accum(self.parents[0], self.grad); });
}

Var soft_round(const Var& x)
{
    return unary(
        x,
        [](double v) {
            const double r = std::nearbyint(v);
            const double d = v - r;
            return r + d * d * d;
        },
        pointwise_backward([](double v, double) {
            const double d = v - std::nearbyint(v);
            return 3.0 * d * d;
        }));
}

namespace {

const std::array<std::array<double, 8>, 8>& dct_basis()
{
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> b{};
        for (int u = 0; u < 8; ++u) {
            const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int k = 0; k < 8; ++k) b[u][k] = a * std::cos((2 * k + 1) * u * std::numbers::pi / 16.0);
        }
        return b;
    }();
    return basis;
}

// forward: B = C X C^T; inverse: X = C^T B C
Tensor block_transform(const Tensor& x, bool inverse)
{
    if (x.h() % 8 != 0 || x.w() % 8 != 0) throw std::invalid_argument("block DCT: dims must be multiples of 8");
    const auto& C = dct_basis();
    Tensor y(x.shape());
    const int planes = x.n() * x.c(), h = x.h(), w = x.w();
    for (int p = 0; p < planes; ++p) {
        const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
        double* dst = y.data() + static_cast<std::size_t>(p) * h * w;
        for (int by = 0; by < h; by += 8)
            for (int bx = 0; bx < w; bx += 8) {
                double tmp[8][8];
                for (int u = 0; u < 8; ++u)
                    for (int k = 0; k < 8; ++k) {
                        double acc = 0.0;
                        for (int j = 0; j < 8; ++j) {
                            const double cv = inverse ? C[j][u] : C[u][j];
                            acc += cv * src[(by + j) * w + bx + k];
                        }
                        tmp[u][k] = acc;
                    }
                for (int u = 0; u < 8; ++u)
                    for (int v = 0; v < 8; ++v) {
                        double acc = 0.0;
                        for (int k = 0; k < 8; ++k) {
                            const double cv = inverse ? C[k][v] : C[v][k];
                            acc += tmp[u][k] * cv;
                        }
                        dst[(by + u) * w + bx + v] = acc;
                    }
            }
    }
    return y;
}

} // namespace

Var block_dct8(const Var& x)
{
    return Var::make(block_transform(x.value(), false), {x}, [](Node& self) {
        accum(self.parents[0], block_transform(self.grad, true));
    });
}

Var block_idct8(const Var& x)
{
    return Var::make(block_transform(x.value(), true), {x}, [](Node& self) {
        accum(self.parents[0], block_transform(self.grad, false));
    });
}

Var bce(const Var& p, const Tensor& target)
{
    require_same_shape(p.value(), target, "bce");
    const int n = p.value().dim(0);
    static constexpr double lo = 1e-12;
    double acc = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double pv = std::clamp(p.value()[i], lo, 1.0 - lo);
        acc -= target[i] * std::log(pv) + (1.0 - target[i]) * std::log(1.0 - pv);
    }
    return Var::make(Tensor({1}, acc / n), {p}, [target, n](Node& self) {
        const auto& pp = self.parents[0];
        if (!pp->requires_grad) return;
        Tensor& d = pp->grad_buffer();
        const double g = self.grad[0] / n;
        for (std::size_t i = 0; i < d.numel(); ++i) {
            const double pv = std::clamp(pp->value[i], lo, 1.0 - lo);
            d[i] += g * (pv - target[i]) / (pv * (1.0 - pv));
        }
    });
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

namespace {

using cplx = std::complex<double>;

// orthonormal 2-D DFT of an h x w complex plane
std::vector<cplx> dft2(const std::vector<cplx>& x, int h, int w)
{
    std::vector<cplx> out(x.size());
    const cv::Mat src(h, w, CV_64FC2, const_cast<cplx*>(x.data()));
    cv::Mat dst(h, w, CV_64FC2, out.data());
    cv::dft(src, dst);
    const double norm = 1.0 / std::sqrt(static_cast<double>(h) * w);
    for (cplx& v : out) v *= norm;
    return out;
}

} // namespace

Var focal_frequency(const Var& d, double alpha)
{
    // Per plane: sum_k w_k |D_k|^2 with w_k = (|D_k| / max|D|)^alpha, i.e.
    // sum_k |D_k|^(2+alpha) / M^alpha. The weight is differentiated through.
    const Tensor& dv = d.value();
    const int planes = dv.n() * dv.c(), h = dv.h(), w = dv.w();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    auto spec = std::make_shared<std::vector<cplx>>(planes * hw);
    auto peak = std::make_shared<std::vector<std::size_t>>(planes);
    auto sums = std::make_shared<std::vector<double>>(planes);
    double total = 0.0;
    for (int p = 0; p < planes; ++p) {
        std::vector<cplx> x(hw);
        for (std::size_t i = 0; i < hw; ++i) x[i] = dv[p * hw + i];
        const auto D = dft2(x, h, w);
        std::size_t arg = 0;
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            const double a = std::abs(D[i]);
            if (a > std::abs(D[arg])) arg = i;
            sum += std::pow(a, 2.0 + alpha);
        }
        std::copy(D.begin(), D.end(), spec->begin() + p * hw);
        (*peak)[p] = arg;
        (*sums)[p] = sum;
        const double m = std::abs(D[arg]);
        if (m > 0.0) total += sum / std::pow(m, alpha);
    }
    const double count = static_cast<double>(planes) * hw;
    return Var::make(Tensor({1}, total / count), {d}, [spec, peak, sums, planes, h, w, hw, count, alpha](Node& self) {
        const auto& pd = self.parents[0];
        if (!pd->requires_grad) return;
        Tensor& g = pd->grad_buffer();
        const double s = self.grad[0] / count;
        for (int p = 0; p < planes; ++p) {
            const cplx* D = spec->data() + p * hw;
            const std::size_t arg = (*peak)[p];
            const double m = std::abs(D[arg]);
            if (m == 0.0) continue;
            // conj of the gradient with respect to (Re D, Im D)
            std::vector<cplx> gc(hw);
            const double scale = (2.0 + alpha) / std::pow(m, alpha);
            for (std::size_t i = 0; i < hw; ++i) gc[i] = scale * std::pow(std::abs(D[i]), alpha) * std::conj(D[i]);
            gc[arg] -= alpha * (*sums)[p] / std::pow(m, alpha + 2.0) * std::conj(D[arg]);
            const auto back = dft2(gc, h, w);
            for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += s * back[i].real();
        }
    });
}

} // namespace ops

} // namespace wmlab
