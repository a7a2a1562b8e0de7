#include "support.hpp"

#include <doctest.h>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

void expect_exact_gradient(const std::function<Var(const Var&)>& f, const Tensor& x, double tol = 1e-5)
{
    const GradReport r = check_gradient(f, x, 1e-6, tol);
    CHECK_MESSAGE(r.passed == r.checked, "worst relative error " << r.worst);
}

} // namespace

TEST_CASE("elementwise ops match central differences")
{
    Rng rng(3);
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    const Tensor other = random_tensor({2, 3, 4, 5}, rng);
    expect_exact_gradient([&](const Var& v) { return ops::mul(v, constant(other)); }, x);
    expect_exact_gradient([](const Var& v) { return ops::square(v); }, x);
    expect_exact_gradient([](const Var& v) { return ops::gelu(v); }, x);
    expect_exact_gradient([](const Var& v) { return ops::tanh(v); }, x);
    expect_exact_gradient([](const Var& v) { return ops::sigmoid(v); }, x);
    expect_exact_gradient([](const Var& v) { return ops::leaky_relu(v, 0.2); }, x);
    expect_exact_gradient([](const Var& v) { return ops::soft_round(ops::scale(v, 3.0)); }, x);
    expect_exact_gradient([](const Var& v) { return ops::mean_per_sample(ops::square(v)); }, x);
}

TEST_CASE("convolutions match central differences for input and weights")
{
    Rng rng(5);
    const Tensor x = random_tensor({2, 3, 7, 6}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    for (int stride : {1, 2}) {
        expect_exact_gradient([&](const Var& v) { return ops::conv2d(v, constant(w), constant(b), stride, 1); }, x);
        expect_exact_gradient([&](const Var& v) { return ops::conv2d(constant(x), v, constant(b), stride, 1); }, w);
        expect_exact_gradient([&](const Var& v) { return ops::conv2d(constant(x), constant(w), v, stride, 1); }, b);
    }
    const Tensor dw = random_tensor({3, 1, 3, 3}, rng);
    const Tensor db = random_tensor({3}, rng);
    expect_exact_gradient([&](const Var& v) { return ops::depthwise_conv2d(v, constant(dw), constant(db), 1, 1); }, x);
    expect_exact_gradient([&](const Var& v) { return ops::depthwise_conv2d(constant(x), v, constant(db), 1, 1); }, dw);
}

TEST_CASE("linear and normalisation layers match central differences")
{
    Rng rng(7);
    const Tensor x = random_tensor({3, 5}, rng);
    const Tensor w = random_tensor({4, 5}, rng);
    const Tensor b = random_tensor({4}, rng);
    expect_exact_gradient([&](const Var& v) { return ops::linear(v, constant(w), constant(b)); }, x);
    expect_exact_gradient([&](const Var& v) { return ops::linear(constant(x), v, constant(b)); }, w);

    const Tensor img = random_tensor({2, 4, 5, 5}, rng);
    const Tensor g = random_tensor({4}, rng, 0.5, 1.5);
    const Tensor beta = random_tensor({4}, rng);
    expect_exact_gradient([](const Var& v) { return ops::instance_norm(v); }, img, 1e-4);
    expect_exact_gradient([&](const Var& v) { return ops::layer_norm_channels(v, constant(g), constant(beta)); }, img,
                          1e-4);
    expect_exact_gradient([&](const Var& v) { return ops::layer_norm_channels(constant(img), v, constant(beta)); }, g);
    expect_exact_gradient([](const Var& v) { return ops::normalize_channels(v); }, img, 1e-4);
}

TEST_CASE("layout and resampling ops match central differences")
{
    Rng rng(11);
    const Tensor x = random_tensor({1, 2, 6, 8}, rng);
    expect_exact_gradient([](const Var& v) { return ops::upsample_nearest(v, 2); }, x);
    expect_exact_gradient([](const Var& v) { return ops::pad_center(v, 10, 12); }, x);
    expect_exact_gradient([](const Var& v) { return ops::pad_reflect(v, 2); }, x);
    expect_exact_gradient([](const Var& v) { return ops::pad_replicate_to(v, 9, 11); }, x);
    expect_exact_gradient([](const Var& v) { return ops::crop(v, 1, 2, 4, 5); }, x);
    expect_exact_gradient([](const Var& v) { return ops::flip_horizontal(v); }, x);
    expect_exact_gradient([](const Var& v) { return ops::global_avg_pool(v); }, x);
    expect_exact_gradient([](const Var& v) { return ops::resize_bilinear(v, 3, 5); }, x);
    expect_exact_gradient([](const Var& v) { return ops::resize_bilinear(v, 11, 13); }, x);
    expect_exact_gradient([](const Var& v) { return ops::slice_channels(v, 1, 1); }, x);
    expect_exact_gradient([](const Var& v) { return ops::concat_channels(v, ops::square(v)); }, x);

    Tensor grid({6, 8, 2});
    for (int y = 0; y < 6; ++y)
        for (int xx = 0; xx < 8; ++xx) {
            grid[(y * 8 + xx) * 2] = xx + 0.37 * std::sin(y + 0.3);
            grid[(y * 8 + xx) * 2 + 1] = y - 0.41 * std::cos(xx + 0.2);
        }
    expect_exact_gradient([&](const Var& v) { return ops::grid_sample_reflect(v, grid); }, x);
}

TEST_CASE("block DCT is orthonormal and invertible")
{
    Rng rng(13);
    const Tensor x = random_tensor({1, 2, 16, 8}, rng);
    const Tensor y = ops::block_dct8(constant(x)).value();
    double ex = 0.0, ey = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        ex += x[i] * x[i];
        ey += y[i] * y[i];
    }
    CHECK(ey == doctest::Approx(ex).epsilon(1e-12));
    const Tensor back = ops::block_idct8(constant(y)).value();
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));
    expect_exact_gradient([](const Var& v) { return ops::block_dct8(v); }, x);
}

TEST_CASE("losses match central differences")
{
    Rng rng(17);
    const Tensor d = random_tensor({2, 3, 8, 8}, rng, -0.1, 0.1);
    expect_exact_gradient([](const Var& v) { return ops::focal_frequency(v, 1.0); }, d, 1e-4);
    expect_exact_gradient([](const Var& v) { return ops::focal_frequency(v, 0.0); }, d, 1e-4);
    const Tensor p = random_tensor({3, 6}, rng, 0.05, 0.95);
    Tensor target({3, 6});
    for (double& t : target.vec()) t = static_cast<double>(rng.below(2));
    expect_exact_gradient([&](const Var& v) { return ops::bce(v, target); }, p);
    const Tensor other = random_tensor({2, 3, 8, 8}, rng);
    expect_exact_gradient([&](const Var& v) { return ops::mse(v, constant(other)); }, d);
}

TEST_CASE("focal frequency loss of a zero difference is zero")
{
    CHECK(ops::focal_frequency(constant(Tensor({1, 3, 8, 8})), 1.0).value()[0] == 0.0);
}

TEST_CASE("gradients accumulate across shared uses and stop under NoGradGuard")
{
    Var x(Tensor({2}, std::vector<double>{1.0, 2.0}), true);
    ops::sum(ops::add(ops::square(x), x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[1] == doctest::Approx(5.0));
    {
        NoGradGuard guard;
        CHECK_FALSE(ops::square(x).requires_grad());
    }
    CHECK(ops::square(x).requires_grad());
}

TEST_CASE("clamp passes gradient only strictly inside the interval")
{
    Var x(Tensor({3}, std::vector<double>{-0.5, 0.5, 1.5}), true);
    ops::sum(ops::clamp(x, 0.0, 1.0)).backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}
