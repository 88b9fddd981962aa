#include "dier/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dier/ops.hpp"
#include "dier/rng.hpp"
#include "dier/tape.hpp"

namespace dier {

GradCheckResult grad_check(const ScalarFn64& f, Tensor64 x, double eps, std::int64_t max_coords,
                           std::uint64_t coord_seed) {
    x.set_requires_grad(true);
    std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
    {
        Tape64 tape;
        Tensor64 y = f(x);
        tape.backward(y);
        auto g = tape.grad(x);
        if (!g.empty()) std::copy(g.begin(), g.end(), analytic.begin());
    }

    std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < x.numel()) {
        Rng rng(coord_seed);
        rng.shuffle(coords);
        coords.resize(static_cast<std::size_t>(max_coords));
    }

    GradCheckResult res;
    auto base = x.data();
    std::vector<double> work(base.begin(), base.end());
    for (std::int64_t c : coords) {
        const double orig = work[static_cast<std::size_t>(c)];
        work[static_cast<std::size_t>(c)] = orig + eps;
        const double fp = f(Tensor64(x.shape(), work)).item();
        work[static_cast<std::size_t>(c)] = orig - eps;
        const double fm = f(Tensor64(x.shape(), work)).item();
        work[static_cast<std::size_t>(c)] = orig;
        const double num = (fp - fm) / (2.0 * eps);
        const double ana = analytic[static_cast<std::size_t>(c)];
        const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
        res.max_rel_err = std::max(res.max_rel_err, std::abs(num - ana) / denom);
        ++res.coords_checked;
    }
    return res;
}

namespace {

Tensor64 randn64(Shape shape, Rng& rng) {
    Tensor64 t(std::move(shape));
    for (auto& v : t.mut()) v = static_cast<double>(rng.normal());
    return t;
}

// Random constant weights give the op a non-uniform upstream gradient.
Tensor64 weighted_sum(const Tensor64& y, Rng& rng) {
    Tensor64 w(y.shape());
    for (auto& v : w.mut()) v = static_cast<double>(rng.normal());
    return sum(mul(y, w));
}

struct OpCase {
    std::string name;
    // Returns (x, f) for one random trial.
    std::function<std::pair<Tensor64, ScalarFn64>(Rng&)> make;
};

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;
    auto push = [&](std::string name,
                    std::function<std::pair<Tensor64, ScalarFn64>(Rng&)> make) {
        cases.push_back({std::move(name), std::move(make)});
    };

    push("add.broadcast", [](Rng& rng) {
        auto x = randn64({2, 3}, rng);
        auto b = randn64({3}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [b, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(add(v, b), r);
        });
    });
    push("add.rhs", [](Rng& rng) {
        auto a = randn64({2, 3}, rng);
        auto x = randn64({3}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [a, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(add(a, v), r);
        });
    });
    push("sub", [](Rng& rng) {
        auto x = randn64({4}, rng);
        auto b = randn64({4}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [b, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(sub(v, b), r);
        });
    });
    push("mul.broadcast", [](Rng& rng) {
        auto x = randn64({2, 1, 3}, rng);
        auto b = randn64({2, 4, 3}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [b, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(mul(v, b), r);
        });
    });
    push("scale", [](Rng& rng) {
        auto x = randn64({5}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(scale(v, 1.7), r);
        });
    });
    push("add_scalar", [](Rng& rng) {
        auto x = randn64({5}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(add_scalar(v, -0.3), r);
        });
    });
    push("silu", [](Rng& rng) {
        auto x = randn64({6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(silu(v), r);
        });
    });
    push("gelu", [](Rng& rng) {
        auto x = randn64({6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(gelu(v), r);
        });
    });
    push("sqrt", [](Rng& rng) {
        Tensor64 x({6});
        for (auto& v : x.mut()) v = 0.5 + rng.uniform();
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(dier::sqrt(v), r);
        });
    });
    push("exp", [](Rng& rng) {
        auto x = randn64({6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(dier::exp(v), r);
        });
    });
    push("log", [](Rng& rng) {
        Tensor64 x({6});
        for (auto& v : x.mut()) v = 0.5 + rng.uniform();
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(dier::log(v), r);
        });
    });
    push("sin", [](Rng& rng) {
        auto x = randn64({6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(dier::sin(v), r);
        });
    });
    push("matmul.lhs", [](Rng& rng) {
        auto x = randn64({3, 4}, rng);
        auto b = randn64({4, 2}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [b, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(matmul(v, b), r);
        });
    });
    push("matmul.rhs", [](Rng& rng) {
        auto a = randn64({3, 4}, rng);
        auto x = randn64({4, 2}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [a, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(matmul(a, v), r);
        });
    });
    push("matmul.batched", [](Rng& rng) {
        auto x = randn64({2, 3, 4}, rng);
        auto b = randn64({4, 2}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [b, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(matmul(v, b), r);
        });
    });
    push("matmul.batched.rhs", [](Rng& rng) {
        auto a = randn64({2, 3, 4}, rng);
        auto x = randn64({2, 4, 2}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [a, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(matmul(a, v), r);
        });
    });
    push("softmax", [](Rng& rng) {
        auto x = randn64({3, 5}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(softmax(v, -1), r);
        });
    });
    push("softmax.axis0", [](Rng& rng) {
        auto x = randn64({3, 5}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(softmax(v, 0), r);
        });
    });
    push("normalize_rows", [](Rng& rng) {
        auto x = randn64({4, 8}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(normalize_rows(v, 1e-5), r);
        });
    });
    push("layer_norm.x", [](Rng& rng) {
        auto x = randn64({3, 6}, rng);
        auto gamma = randn64({6}, rng);
        auto beta = randn64({6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [gamma, beta, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(layer_norm(v, gamma, beta), r);
        });
    });
    push("layer_norm.gamma", [](Rng& rng) {
        auto a = randn64({3, 6}, rng);
        auto x = randn64({6}, rng);
        auto beta = randn64({6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [a, beta, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(layer_norm(a, v, beta), r);
        });
    });
    push("group_norm.x", [](Rng& rng) {
        auto x = randn64({2, 4, 3, 3}, rng);
        auto gamma = randn64({4}, rng);
        auto beta = randn64({4}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [gamma, beta, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(group_norm(v, 2, gamma, beta), r);
        });
    });
    push("conv2d.x", [](Rng& rng) {
        auto x = randn64({1, 2, 5, 5}, rng);
        auto w = randn64({3, 2, 3, 3}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [w, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(conv2d(v, w, 1, 1), r);
        });
    });
    push("conv2d.w", [](Rng& rng) {
        auto a = randn64({1, 2, 5, 5}, rng);
        auto x = randn64({3, 2, 3, 3}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [a, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(conv2d(a, v, 2, 1), r);
        });
    });
    push("conv2d.bias", [](Rng& rng) {
        auto a = randn64({2, 2, 4, 4}, rng);
        auto w = randn64({3, 2, 3, 3}, rng);
        auto x = randn64({3}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [a, w, seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(conv2d(a, w, v, 1, 1), r);
        });
    });
    push("transpose_last2", [](Rng& rng) {
        auto x = randn64({3, 4}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(transpose_last2(v), r);
        });
    });
    push("permute", [](Rng& rng) {
        auto x = randn64({2, 3, 4}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(permute(v, {2, 0, 1}), r);
        });
    });
    push("slice_last", [](Rng& rng) {
        auto x = randn64({3, 8}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(slice_last(v, 2, 4), r);
        });
    });
    push("reshape", [](Rng& rng) {
        auto x = randn64({2, 6}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(reshape(v, {3, 4}), r);
        });
    });
    push("sum", [](Rng& rng) {
        auto x = randn64({7}, rng);
        return std::pair<Tensor64, ScalarFn64>(x, [](const Tensor64& v) { return sum(v); });
    });
    push("mean", [](Rng& rng) {
        auto x = randn64({7}, rng);
        return std::pair<Tensor64, ScalarFn64>(x, [](const Tensor64& v) { return mean(v); });
    });
    push("mean_tail", [](Rng& rng) {
        auto x = randn64({2, 3, 4}, rng);
        auto seed = rng.next_u64();
        return std::pair<Tensor64, ScalarFn64>(x, [seed](const Tensor64& v) {
            Rng r(seed);
            return weighted_sum(mean_tail(v, 2), r);
        });
    });
    push("softmax_cross_entropy", [](Rng& rng) {
        auto x = randn64({4, 3}, rng);
        auto labels = std::make_shared<std::vector<int>>();
        for (int i = 0; i < 4; ++i) labels->push_back(static_cast<int>(rng.uniform_int(3)));
        return std::pair<Tensor64, ScalarFn64>(x, [labels](const Tensor64& v) {
            return softmax_cross_entropy(v, std::span<const int>(*labels));
        });
    });
    return cases;
}

}  // namespace

std::vector<OpGradCheck> run_op_grad_checks(std::uint64_t seed, int trials, double tol) {
    std::vector<OpGradCheck> results;
    for (const auto& op : op_cases()) {
        Rng rng = Rng::derive(seed, op.name);
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            auto [x, f] = op.make(rng);
            auto res = grad_check(f, x);
            worst = std::max(worst, res.max_rel_err);
        }
        results.push_back({op.name, worst, worst < tol});
    }
    return results;
}

}  // namespace dier
