#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dier/grad_check.hpp"
#include "dier/ops.hpp"
#include "dier/tape.hpp"

using namespace dier;

TEST_SUITE_BEGIN("tensor-core");

TEST_CASE("matmul identity and projector") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    auto r = matmul(eye, a);
    CHECK(r.data()[0] == 1.0f);
    CHECK(r.data()[1] == 2.0f);
    CHECK(r.data()[2] == 3.0f);
    CHECK(r.data()[3] == 4.0f);

    Tensor proj({2, 2}, {1, 0, 0, 0});
    Tensor b({2, 2}, {5, 6, 7, 8});
    auto p = matmul(proj, b);
    CHECK(p.data()[0] == 5.0f);
    CHECK(p.data()[1] == 6.0f);
    CHECK(p.data()[2] == 0.0f);
    CHECK(p.data()[3] == 0.0f);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(11);
    auto a = randn({3, 4}, rng).cast<double>();
    auto b = randn({4, 2}, rng).cast<double>();
    auto res = grad_check(
        [&](const Tensor64& x) { return sum(matmul(x, b)); }, a);
    CHECK(res.max_rel_err < 1e-3);  // and far tighter in practice
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("matmul associativity in f32") {
    Rng rng(3);
    Tensor a = randn({4, 5}, rng);
    Tensor b = randn({5, 6}, rng);
    Tensor c = randn({6, 3}, rng);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    double worst = 0;
    for (std::int64_t i = 0; i < left.numel(); ++i) {
        worst = std::max(worst, std::abs(double(left.data()[i]) - right.data()[i]));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("conv2d identity kernel and constant field") {
    Rng rng(5);
    Tensor x = randn({1, 1, 5, 5}, rng);
    Tensor w({1, 1, 1, 1}, {1.0f});
    auto y = conv2d(x, w, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor c = Tensor::full({1, 1, 6, 6}, 2.5f);
    Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto z = conv2d(c, ones, 1, 0);  // interior everywhere with pad 0
    REQUIRE(z.shape() == Shape{1, 1, 4, 4});
    for (float v : z.data()) CHECK(v == doctest::Approx(9.0f * 2.5f).epsilon(1e-6));
}

TEST_CASE("conv2d output size arithmetic and errors") {
    Tensor x({1, 1, 5, 5});
    Tensor w({2, 1, 3, 3});
    auto y = conv2d(x, w, 2, 1);
    CHECK(y.shape() == Shape{1, 2, 3, 3});  // floor((5+2-3)/2)+1
    Tensor big_kernel({1, 1, 9, 9});
    CHECK_THROWS_AS(conv2d(x, big_kernel, 1, 0), DimensionError);
}

TEST_CASE("layer_norm examples") {
    Tensor gamma = Tensor::full({4}, 1.0f);
    Tensor beta = Tensor::zeros({4});
    Tensor constant_row({1, 4}, {3, 3, 3, 3});
    auto z = layer_norm(constant_row, gamma, beta);
    for (float v : z.data()) CHECK(std::abs(v) < 1e-5);

    Tensor pm({1, 2}, {1, -1});
    Tensor g2 = Tensor::full({2}, 1.0f);
    Tensor b2 = Tensor::zeros({2});
    auto y = layer_norm(pm, g2, b2);
    CHECK(y.data()[0] == doctest::Approx(1.0f).epsilon(1e-4));
    CHECK(y.data()[1] == doctest::Approx(-1.0f).epsilon(1e-4));

    Rng rng(9);
    Tensor x = randn({4, 8}, rng);
    Tensor g8 = Tensor::full({8}, 1.0f);
    Tensor b8 = Tensor::zeros({8});
    auto n = layer_norm(x, g8, b8);
    for (int r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (int j = 0; j < 8; ++j) mean += n.data()[r * 8 + j];
        mean /= 8;
        for (int j = 0; j < 8; ++j) {
            const double d = n.data()[r * 8 + j] - mean;
            var += d * d;
        }
        var /= 8;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("softmax symmetry, stability, shift invariance") {
    Tensor z({1, 4}, {0, 0, 0, 0});
    auto s = softmax(z, -1);
    for (float v : s.data()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));

    Tensor huge({1, 2}, {3.0f, 1003.0f});
    auto h = softmax(huge, -1);
    CHECK(h.data()[0] == doctest::Approx(0.0f).epsilon(1e-6));
    CHECK(h.data()[1] == doctest::Approx(1.0f).epsilon(1e-6));

    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = randn({3, 7}, rng);
        auto a = softmax(x, -1);
        auto shifted = add_scalar(x, 11.5f);
        auto b = softmax(shifted, -1);
        for (int r = 0; r < 3; ++r) {
            double row_sum = 0;
            for (int j = 0; j < 7; ++j) row_sum += a.data()[r * 7 + j];
            CHECK(std::abs(row_sum - 1.0) < 1e-6);
        }
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-6);
        }
    }
}

TEST_CASE("softmax over a non-trailing axis") {
    Rng rng(4);
    Tensor x = randn({3, 5}, rng);
    auto a = softmax(x, 0);
    auto xt = transpose_last2(x);
    auto b = transpose_last2(softmax(xt, -1));
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("elementwise basics") {
    Tensor z({1}, {0.0f});
    CHECK(silu(z).data()[0] == 0.0f);

    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3}, {10, 20, 30});
    auto s = add(a, b);
    REQUIRE(s.shape() == Shape{2, 3});
    CHECK(s.data()[0] == 11.0f);
    CHECK(s.data()[5] == 36.0f);

    Tensor bad({2});
    CHECK_THROWS_AS(add(a, bad), DimensionError);
}

TEST_CASE("backward on linear and quadratic functionals") {
    Tensor w({3}, {5, -2, 7});
    w.set_requires_grad(true);
    {
        Tape tape;
        auto loss = sum(w);
        tape.backward(loss);
        auto g = tape.grad(w);
        REQUIRE(g.size() == 3);
        for (float v : g) CHECK(v == 1.0f);
    }
    Tensor w2({2}, {1, 2});
    w2.set_requires_grad(true);
    {
        Tape tape;
        auto loss = sum(mul(w2, w2));
        tape.backward(loss);
        auto g = tape.grad(w2);
        CHECK(g[0] == 2.0f);
        CHECK(g[1] == 4.0f);
    }
}

TEST_CASE("backward usage errors") {
    Tensor w({2}, {1, 2});
    w.set_requires_grad(true);
    {
        Tape tape;
        auto y = mul(w, w);  // non-scalar
        CHECK_THROWS_AS(tape.backward(y), UsageError);
    }
    {
        Tensor detached = Tensor::scalar(1.0f);
        Tape tape;
        CHECK_THROWS_AS(tape.backward(detached), UsageError);
    }
    {
        Tape tape;
        auto loss = sum(w);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), UsageError);
    }
}

TEST_CASE("requires_grad=false inputs never receive gradients") {
    Tensor w({2}, {1, 2});
    w.set_requires_grad(true);
    Tensor c({2}, {3, 4});  // not a parameter
    Tape tape;
    auto loss = sum(mul(w, c));
    tape.backward(loss);
    CHECK(tape.grad(c).empty());
    CHECK(tape.grad(w).size() == 2);
}

TEST_CASE("grad_check exactness on sum") {
    Tensor64 x({3}, {1.0, 2.0, 3.0});
    auto res = grad_check([](const Tensor64& v) { return sum(v); }, x, /*eps=*/0.125);
    CHECK(res.max_rel_err == 0.0);
}

TEST_CASE("grad_check analytic oracle for sum(sin(x))") {
    Tensor64 x({2}, {0.0, std::numbers::pi / 2});
    x.set_requires_grad(true);
    {
        Tape64 tape;
        auto y = sum(dier::sin(x));
        tape.backward(y);
        auto g = tape.grad(x);
        CHECK(std::abs(g[0] - 1.0) < 1e-12);
        CHECK(std::abs(g[1] - 0.0) < 1e-12);
    }
    auto res = grad_check([](const Tensor64& v) { return sum(dier::sin(v)); }, x);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("every registered op passes the f64 finite-difference sweep") {
    auto checks = run_op_grad_checks(0xC0FFEE, /*trials=*/20, /*tol=*/1e-4);
    REQUIRE(checks.size() > 25);
    for (const auto& c : checks) {
        INFO(c.name, " max_rel_err=", c.max_rel_err);
        CHECK(c.pass);
    }
}

TEST_CASE("composed conv->norm->silu->pool->linear gradients") {
    Rng rng(1234);
    auto wc = randn({3, 2, 3, 3}, rng).cast<double>();
    auto gamma = Tensor::full({3}, 1.0f).cast<double>();
    auto beta = Tensor::zeros({3}).cast<double>();
    auto wf = randn({3, 4}, rng).cast<double>();
    auto x0 = randn({2, 2, 6, 6}, rng).cast<double>();

    auto net = [&](const Tensor64& conv_w, const Tensor64& fc_w) {
        auto h = conv2d(x0, conv_w, 1, 1);
        h = group_norm(h, 1, gamma, beta);
        h = silu(h);
        auto pooled = mean_tail(h, 2);     // [N, 3]
        auto out = matmul(pooled, fc_w);  // [N, 4]
        return mean(mul(out, out));
    };

    auto res_conv =
        grad_check([&](const Tensor64& v) { return net(v, wf); }, wc);
    auto res_fc = grad_check([&](const Tensor64& v) { return net(wc, v); }, wf);
    CHECK(res_conv.max_rel_err < 1e-4);
    CHECK(res_fc.max_rel_err < 1e-4);

    // f32 tape gradients track the f64 ones to ~1e-2 relative.
    auto net32 = [&](Tensor w32) {
        w32.set_requires_grad(true);
        Tape tape;
        auto h = conv2d(x0.cast<float>(), w32, 1, 1);
        h = group_norm(h, 1, gamma.cast<float>(), beta.cast<float>());
        h = silu(h);
        auto out = matmul(mean_tail(h, 2), wf.cast<float>());
        auto loss = mean(mul(out, out));
        tape.backward(loss);
        auto g = tape.grad(w32);
        return std::vector<float>(g.begin(), g.end());
    };
    auto g32 = net32(wc.cast<float>());
    Tensor64 wc_d = wc;
    wc_d.set_requires_grad(true);
    Tape64 tape;
    auto loss = net(wc_d, wf);
    tape.backward(loss);
    auto g64 = tape.grad(wc_d);
    for (std::size_t i = 0; i < g32.size(); ++i) {
        const double denom = std::max({std::abs(g64[i]), double(std::abs(g32[i])), 1e-4});
        CHECK(std::abs(g32[i] - g64[i]) / denom < 1e-2);
    }
}

TEST_CASE("forward determinism is bit-exact") {
    Rng rng(77);
    Tensor a = randn({8, 16}, rng);
    Tensor b = randn({16, 8}, rng);
    auto y1 = matmul(silu(a), b);
    auto y2 = matmul(silu(a), b);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("reshape shares data and routes gradients") {
    Tensor w({2, 3}, {1, 2, 3, 4, 5, 6});
    w.set_requires_grad(true);
    Tape tape;
    auto r = reshape(w, {3, 2});
    CHECK(same_data(w, r));
    auto loss = sum(mul(r, r));
    tape.backward(loss);
    auto g = tape.grad(w);
    REQUIRE(g.size() == 6);
    CHECK(g[0] == 2.0f);
    CHECK(g[5] == 12.0f);
}

TEST_CASE("scalar tensors are 0-dim") {
    auto s = Tensor::scalar(4.0f);
    CHECK(s.ndim() == 0);
    CHECK(s.numel() == 1);
    CHECK(s.item() == 4.0f);
}

TEST_SUITE_END();
