#include "../support/oracles.hpp"

#include <doctest.h>

#include <hsicae/errors.hpp>
#include <hsicae/kernels.hpp>

#include <cmath>
#include <numbers>

using namespace hsicae;

namespace {

Tensor4d from(std::initializer_list<double> v, Shape4 s) { return Tensor4d(s, std::vector<double>(v)); }

// Loss L = sum(out * probe) turns any forward map into a scalar for the
// finite-difference checks.
double dot(const Tensor4d& a, const Tensor4d& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("identity kernel returns the input") {
    Rng rng(1);
    auto x = oracle::random_tensor<double>(rng, {1, 1, 3, 3});
    ConvParams<double> p{Tensor4d(1, 1, 3, 3), {0.0}, 1};
    p.weights(0, 0, 1, 1) = 1.0;
    CHECK(conv2d_forward(x, p) == x);
}

TEST_CASE("1x1 kernel with bias by hand") {
    auto x = from({1, 2, 3, 4}, {1, 1, 2, 2});
    ConvParams<double> p{from({2}, {1, 1, 1, 1}), {1.0}, 1};
    CHECK(conv2d_forward(x, p).vec() == std::vector<double>{3, 5, 7, 9});
}

TEST_CASE("same padding output shape") {
    CHECK(conv2d_forward(Tensor4d(1, 1, 4, 4), ConvParams<double>{Tensor4d(1, 1, 3, 3), {0.0}, 2}).shape() ==
          Shape4{1, 1, 2, 2});
    CHECK(same_padding(144, 3, 2).out == 72);
    CHECK(same_padding(5, 3, 2).out == 3);
}

TEST_CASE("channel mismatch raises ShapeError") {
    CHECK_THROWS_AS(conv2d_forward(Tensor4d(1, 2, 4, 4), ConvParams<double>{Tensor4d(1, 3, 3, 3), {0.0}, 1}),
                    ShapeError);
}

TEST_CASE("conv2d equals the direct-summation oracle bitwise") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const Shape4 xs{1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(8)};
        const std::size_t k = rng.below(2) ? 3 : 1, stride = 1 + rng.below(2), oc = 1 + rng.below(4);
        auto x = oracle::random_tensor<float>(rng, xs);
        ConvParams<float> p{oracle::random_tensor<float>(rng, {oc, xs.c, k, k}), {}, stride};
        for (std::size_t o = 0; o < oc; ++o) p.bias.push_back(static_cast<float>(rng.uniform(-1, 1)));
        REQUIRE(conv2d_forward(x, p) == oracle::conv2d(x, p.weights, p.bias, stride));
    }
}

TEST_CASE("conv2d on wide layers matches the oracle") {
    // Exercises the vector tiles and their column tails.
    Rng rng(8);
    auto x = oracle::random_tensor<float>(rng, {2, 5, 11, 13});
    ConvParams<float> p{oracle::random_tensor<float>(rng, {19, 5, 3, 3}), std::vector<float>(19, 0.25f), 1};
    CHECK(conv2d_forward(x, p) == oracle::conv2d(x, p.weights, p.bias, 1));
    auto xd = oracle::random_tensor<double>(rng, {1, 3, 17, 9});
    ConvParams<double> pd{oracle::random_tensor<double>(rng, {7, 3, 3, 3}), std::vector<double>(7, -0.5), 2};
    CHECK(conv2d_forward(xd, pd) == oracle::conv2d(xd, pd.weights, pd.bias, 2));
}

TEST_CASE("conv2d_backward: zero gradient and 1x1 hand case") {
    auto x = from({1, 2, 3, 4}, {1, 1, 2, 2});
    ConvParams<double> p{from({0.5}, {1, 1, 1, 1}), {0.0}, 1};
    auto g0 = conv2d_backward(x, p, Tensor4d(1, 1, 2, 2));
    CHECK(g0.grad_w.vec() == std::vector<double>{0.0});
    CHECK(g0.grad_b == std::vector<double>{0.0});
    auto g = conv2d_backward(x, p, from({1, 1, 1, 1}, {1, 1, 2, 2}));
    CHECK(g.grad_w[0] == 10.0);
    CHECK(g.grad_b[0] == 4.0);
    CHECK(g.grad_x.vec() == std::vector<double>{0.5, 0.5, 0.5, 0.5});
}

TEST_CASE("conv2d_backward matches finite differences") {
    for (std::size_t stride : {1u, 2u}) {
        Rng rng(11 + stride);
        auto x = oracle::random_tensor<double>(rng, {1, 3, 5, 5});
        ConvParams<double> p{oracle::random_tensor<double>(rng, {2, 3, 3, 3}), {0.1, -0.2}, stride};
        const auto out = conv2d_forward(x, p);
        auto probe = oracle::random_tensor<double>(rng, out.shape());
        const auto g = conv2d_backward(x, p, probe);

        // Parameters: x, then w, then b.
        std::vector<double> theta = x.vec();
        theta.insert(theta.end(), p.weights.vec().begin(), p.weights.vec().end());
        theta.insert(theta.end(), p.bias.begin(), p.bias.end());
        std::vector<double> analytic = g.grad_x.vec();
        analytic.insert(analytic.end(), g.grad_w.vec().begin(), g.grad_w.vec().end());
        analytic.insert(analytic.end(), g.grad_b.begin(), g.grad_b.end());
        auto loss = [&](std::span<const double> t) {
            Tensor4d xx(x.shape(), std::vector<double>(t.begin(), t.begin() + x.size()));
            ConvParams<double> pp{Tensor4d(p.weights.shape(), std::vector<double>(t.begin() + x.size(),
                                                                                  t.begin() + x.size() + p.weights.size())),
                                  std::vector<double>(t.end() - 2, t.end()), stride};
            return dot(conv2d_forward(xx, pp), probe);
        };
        const auto rep = finite_diff_check(loss, theta, analytic);
        CHECK(rep.passed);
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("upsample nearest") {
    auto x = from({1, 2, 3, 4}, {1, 1, 2, 2});
    CHECK(upsample2d_nearest(x, 2).vec() ==
          std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    CHECK(upsample2d_nearest(x, 1) == x);
    CHECK_THROWS_AS(upsample2d_nearest(x, 0), ArgError);
    auto g = upsample2d_nearest_backward(Tensor4d(1, 1, 4, 4, 1.0), 2);
    CHECK(g.vec() == std::vector<double>(4, 4.0));
}

TEST_CASE("upsample then average pooling recovers the input") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        auto x = oracle::random_tensor<float>(rng, {1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6)});
        const std::size_t f = 1 + rng.below(3);
        CHECK(upsample2d_nearest(x, f) == oracle::upsample(x, f));
        if (f == 2) CHECK(avg_pool2d(upsample2d_nearest(x, f), f) == x);
    }
}

TEST_CASE("batchnorm hand statistics and degenerate variance") {
    auto p = BatchNormParams<double>::identity(1);
    p.epsilon = 1e-12;
    auto y = batchnorm_forward(from({1, 3}, {2, 1, 1, 1}), p, Mode::Train);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
    // Running stats blended with momentum 0.1 from (0, 1).
    CHECK(p.running_mean[0] == doctest::Approx(0.2));
    CHECK(p.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));

    auto q = BatchNormParams<double>::identity(1);
    q.beta[0] = 0.75;
    auto c = batchnorm_forward(Tensor4d(2, 1, 2, 2, 5.0), q, Mode::Train);
    for (double v : c.span()) CHECK(v == 0.75);
}

TEST_CASE("batchnorm infer is a per-channel affine map") {
    BatchNormParams<double> p;
    p.gamma = {2.0, -1.0};
    p.beta = {0.5, 1.0};
    p.running_mean = {1.0, -2.0};
    p.running_var = {4.0, 0.25};
    Rng rng(5);
    auto x = oracle::random_tensor<double>(rng, {2, 2, 3, 3});
    auto y = batchnorm_infer(x, p);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 9; ++i) {
                const double a = p.gamma[c] / std::sqrt(p.running_var[c] + p.epsilon);
                const double expect = a * (x(n, c, i / 3, i % 3) - p.running_mean[c]) + p.beta[c];
                CHECK(y(n, c, i / 3, i % 3) == doctest::Approx(expect).epsilon(1e-12));
            }
}

TEST_CASE("batchnorm train backward matches finite differences") {
    Rng rng(21);
    auto x = oracle::random_tensor<double>(rng, {3, 2, 3, 3});
    auto p = BatchNormParams<double>::identity(2);
    p.gamma = {1.5, 0.7};
    p.beta = {0.1, -0.3};
    auto probe = oracle::random_tensor<double>(rng, x.shape());
    BatchNormCache<double> cache;
    auto pc = p;
    batchnorm_forward(x, pc, Mode::Train, &cache);
    auto g = batchnorm_backward(cache, p, probe);
    std::vector<double> theta = x.vec(), analytic = g.grad_x.vec();
    theta.insert(theta.end(), p.gamma.begin(), p.gamma.end());
    theta.insert(theta.end(), p.beta.begin(), p.beta.end());
    analytic.insert(analytic.end(), g.grad_gamma.begin(), g.grad_gamma.end());
    analytic.insert(analytic.end(), g.grad_beta.begin(), g.grad_beta.end());
    auto loss = [&](std::span<const double> t) {
        Tensor4d xx(x.shape(), std::vector<double>(t.begin(), t.begin() + x.size()));
        auto pp = p;
        pp.gamma = {t[x.size()], t[x.size() + 1]};
        pp.beta = {t[x.size() + 2], t[x.size() + 3]};
        return dot(batchnorm_forward(xx, pp, Mode::Train), probe);
    };
    CHECK(finite_diff_check(loss, theta, analytic).max_rel_error < 1e-4);
}

TEST_CASE("relu and its gradient") {
    auto x = from({-1, 0, 2}, {1, 1, 1, 3});
    CHECK(relu(x).vec() == std::vector<double>{0, 0, 2});
    CHECK(relu_backward(x, Tensor4d(1, 1, 1, 3, 1.0)).vec() == std::vector<double>{0, 0, 1});

    Rng rng(4);
    auto r = oracle::random_tensor<double>(rng, {1, 2, 4, 4});
    for (auto& v : r.span())
        if (std::abs(v) < 1e-3) v = 0.5;
    auto probe = oracle::random_tensor<double>(rng, r.shape());
    auto analytic = relu_backward(r, probe).vec();
    auto loss = [&](std::span<const double> t) {
        return dot(relu(Tensor4d(r.shape(), std::vector<double>(t.begin(), t.end()))), probe);
    };
    GradCheckOptions o;
    o.rel_step = 1e-6;
    CHECK(finite_diff_check(loss, r.vec(), analytic, o).max_rel_error < 1e-4);
}

TEST_CASE("mse loss") {
    auto z = from({0, 0}, {1, 1, 1, 2});
    CHECK(mse_loss(z, z).value == 0.0);
    auto l = mse_loss(z, from({2, 4}, {1, 1, 1, 2}));
    CHECK(l.value == 10.0);
    CHECK(l.grad.vec() == std::vector<double>{2, 4});
    CHECK_THROWS_AS(mse_loss(z, Tensor4d(1, 1, 1, 3)), ShapeError);
}

TEST_CASE("msle loss") {
    auto x = from({0}, {1, 1, 1, 1});
    CHECK(msle_loss(x, x).value == 0.0);
    CHECK(msle_loss(x, from({std::numbers::e - 1.0}, {1, 1, 1, 1})).value == doctest::Approx(1.0).epsilon(1e-15));

    Rng rng(9);
    auto t = oracle::random_tensor<double>(rng, {1, 1, 3, 3}, 0.0, 5.0);
    auto y = oracle::random_tensor<double>(rng, {1, 1, 3, 3}, 0.1, 5.0);
    auto analytic = msle_loss(t, y).grad.vec();
    auto loss = [&](std::span<const double> v) {
        return msle_loss(t, Tensor4d(y.shape(), std::vector<double>(v.begin(), v.end()))).value;
    };
    CHECK(finite_diff_check(loss, y.vec(), analytic).max_rel_error < 1e-4);

    // Negative predictions clamp to zero and carry no gradient.
    auto neg = msle_loss(from({1.0}, {1, 1, 1, 1}), from({-3.0}, {1, 1, 1, 1}));
    CHECK(neg.value == doctest::Approx(std::log(2.0) * std::log(2.0)));
    CHECK(neg.grad[0] == 0.0);
}

TEST_CASE("adam: zero gradient, first step and bias correction") {
    std::vector<double> w{1.0};
    std::vector<double> g{0.0};
    AdamState st;
    std::vector<std::span<double>> ps{w};
    std::vector<std::span<const double>> gs{g};
    adam_step<double>(ps, gs, st);
    CHECK(w[0] == 1.0);
    CHECK(st.t == 1);

    std::vector<double> w2{0.0}, g2{2.0};
    AdamState s2;
    std::vector<std::span<double>> p2{w2};
    std::vector<std::span<const double>> gg2{g2};
    adam_step<double>(p2, gg2, s2);
    const double d1 = w2[0];
    CHECK(d1 == doctest::Approx(-0.001).epsilon(1e-6));
    adam_step<double>(p2, gg2, s2);
    const double d2 = w2[0] - d1;
    CHECK(std::abs(d2) <= std::abs(d1) * (1 + 1e-6));
    for (const auto& v : s2.v)
        for (double x : v) CHECK(x >= 0.0);

    std::vector<double> bad{1.0, 2.0};
    std::vector<std::span<const double>> gb{bad};
    CHECK_THROWS_AS(adam_step<double>(p2, gb, s2), ShapeError);
}

TEST_CASE("finite_diff_check: exact for quadratics, catches corrupted gradients") {
    std::vector<double> theta{0.3, -1.2, 2.0};
    auto lin = [](std::span<const double> t) { return 3 * t[0] - 2 * t[1] + 0.5 * t[2]; };
    CHECK(finite_diff_check(lin, theta, std::vector<double>{3, -2, 0.5}).max_rel_error < 1e-8);
    auto quad = [](std::span<const double> t) { return t[0] * t[0] + t[1] * t[2]; };
    std::vector<double> good{0.6, 2.0, -1.2};
    CHECK(finite_diff_check(quad, theta, good).passed);
    std::vector<double> bad{0.6, 2.1, -1.2};
    CHECK_FALSE(finite_diff_check(quad, theta, bad).passed);
}

TEST_CASE("two-layer conv+relu toy net gradient") {
    Rng rng(31);
    auto x = oracle::random_tensor<double>(rng, {1, 1, 6, 6});
    ConvParams<double> a{oracle::random_tensor<double>(rng, {3, 1, 3, 3}), {0.1, 0.2, -0.1}, 1};
    ConvParams<double> b{oracle::random_tensor<double>(rng, {1, 3, 3, 3}), {0.05}, 1};
    auto run = [&](const ConvParams<double>& pa) {
        return mse_loss(x, conv2d_forward(relu(conv2d_forward(x, pa)), b)).value;
    };
    const auto h = conv2d_forward(x, a);
    const auto r = relu(h);
    const auto y = conv2d_forward(r, b);
    const auto l = mse_loss(x, y);
    const auto gb = conv2d_backward(r, b, l.grad);
    const auto ga = conv2d_backward(x, a, relu_backward(h, gb.grad_x));
    auto loss = [&](std::span<const double> t) {
        ConvParams<double> pa{Tensor4d(a.weights.shape(), std::vector<double>(t.begin(), t.end())), a.bias, 1};
        return run(pa);
    };
    GradCheckOptions o;
    o.rel_step = 1e-6;
    CHECK(finite_diff_check(loss, a.weights.vec(), ga.grad_w.vec(), o).max_rel_error < 1e-4);
}

TEST_CASE("kernels are deterministic") {
    Rng rng(2);
    auto x = oracle::random_tensor<float>(rng, {2, 3, 9, 9});
    ConvParams<float> p{oracle::random_tensor<float>(rng, {4, 3, 3, 3}), std::vector<float>(4, 0.0f), 2};
    CHECK(conv2d_forward(x, p) == conv2d_forward(x, p));
}

}
