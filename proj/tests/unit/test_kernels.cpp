#include "support.hpp"

#include "wmlab/kernels.hpp"

#include <doctest.h>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    REQUIRE(a.same_shape(b));
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

} // namespace

TEST_CASE("gemm matches the serial reference for every transpose combination")
{
    Rng rng(1);
    const int shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {9, 17, 33}, {16, 64, 27}, {37, 530, 19}, {130, 70, 300}};
    for (const auto& s : shapes) {
        const int m = s[0], n = s[1], k = s[2];
        for (bool ta : {false, true})
            for (bool tb : {false, true}) {
                const Tensor a = random_tensor({ta ? k : m, ta ? m : k}, rng);
                const Tensor b = random_tensor({tb ? n : k, tb ? k : n}, rng);
                const Tensor c0 = random_tensor({m, n}, rng);
                Tensor fast = c0, ref = c0;
                const int lda = ta ? m : k, ldb = tb ? k : n;
                kernels::gemm(ta, tb, m, n, k, 0.7, a.data(), lda, b.data(), ldb, 0.3, fast.data(), n);
                kernels::reference::gemm(ta, tb, m, n, k, 0.7, a.data(), lda, b.data(), ldb, 0.3, ref.data(), n);
                CAPTURE(m);
                CAPTURE(n);
                CAPTURE(k);
                CAPTURE(ta);
                CAPTURE(tb);
                CHECK(max_abs_diff(fast, ref) < 1e-11);
            }
    }
}

TEST_CASE("convolution forward and backward match the reference")
{
    Rng rng(2);
    struct Case {
        int n, c, h, w, o, k, stride, pad;
    };
    const Case cases[] = {{1, 3, 8, 8, 4, 3, 1, 1}, {2, 5, 9, 7, 6, 3, 2, 1}, {2, 3, 16, 16, 8, 4, 2, 1},
                          {1, 4, 12, 12, 3, 1, 1, 0}, {3, 2, 8, 12, 5, 4, 4, 0}, {1, 16, 32, 32, 16, 3, 1, 1}};
    for (const Case& cs : cases) {
        CAPTURE(cs.k);
        CAPTURE(cs.stride);
        const Tensor x = random_tensor({cs.n, cs.c, cs.h, cs.w}, rng);
        const Tensor w = random_tensor({cs.o, cs.c, cs.k, cs.k}, rng);
        const Tensor b = random_tensor({cs.o}, rng);
        const kernels::ConvGeom g{cs.stride, cs.pad};
        const Tensor y = kernels::conv2d_forward(x, w, b, g);
        CHECK(max_abs_diff(y, kernels::reference::conv2d_forward(x, w, b, g)) < 1e-11);

        const Tensor dy = random_tensor(y.shape(), rng);
        Tensor dx(x.shape()), dw(w.shape()), db(b.shape());
        Tensor rdx(x.shape()), rdw(w.shape()), rdb(b.shape());
        kernels::conv2d_backward(x, w, dy, g, &dx, &dw, &db);
        kernels::reference::conv2d_backward(x, w, dy, g, &rdx, &rdw, &rdb);
        CHECK(max_abs_diff(dx, rdx) < 1e-10);
        CHECK(max_abs_diff(dw, rdw) < 1e-10);
        CHECK(max_abs_diff(db, rdb) < 1e-10);
    }
}

TEST_CASE("depthwise convolution matches the reference")
{
    Rng rng(3);
    for (int k : {3, 7}) {
        const Tensor x = random_tensor({2, 6, 11, 9}, rng);
        const Tensor w = random_tensor({6, 1, k, k}, rng);
        const Tensor b = random_tensor({6}, rng);
        const kernels::ConvGeom g{1, k / 2};
        const Tensor y = kernels::depthwise_forward(x, w, b, g);
        CHECK(max_abs_diff(y, kernels::reference::depthwise_forward(x, w, b, g)) < 1e-12);
        const Tensor dy = random_tensor(y.shape(), rng);
        Tensor dx(x.shape()), dw(w.shape()), db(b.shape());
        Tensor rdx(x.shape()), rdw(w.shape()), rdb(b.shape());
        kernels::depthwise_backward(x, w, dy, g, &dx, &dw, &db);
        kernels::reference::depthwise_backward(x, w, dy, g, &rdx, &rdw, &rdb);
        CHECK(max_abs_diff(dx, rdx) < 1e-11);
        CHECK(max_abs_diff(dw, rdw) < 1e-11);
        CHECK(max_abs_diff(db, rdb) < 1e-11);
    }
}

TEST_CASE("backward accumulates into existing gradients")
{
    Rng rng(4);
    const Tensor x = random_tensor({1, 2, 6, 6}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const kernels::ConvGeom g{1, 1};
    const Tensor dy = random_tensor({1, 3, 6, 6}, rng);
    Tensor once(x.shape()), twice(x.shape());
    kernels::conv2d_backward(x, w, dy, g, &once, nullptr, nullptr);
    kernels::conv2d_backward(x, w, dy, g, &twice, nullptr, nullptr);
    kernels::conv2d_backward(x, w, dy, g, &twice, nullptr, nullptr);
    for (std::size_t i = 0; i < once.numel(); ++i) CHECK(twice[i] == doctest::Approx(2.0 * once[i]));
}
