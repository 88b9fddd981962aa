#pragma once

// Shared helpers for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dier/grad_check.hpp"
#include "dier/nets.hpp"
#include "dier/ops.hpp"
#include "dier/tape.hpp"

namespace dier::testing {

// adaLN-Zero leaves whole branches at exactly zero; fill those with small
// noise so gradient checks exercise every path.
template <typename Model>
void randomize_zero_params(Model& model, std::uint64_t seed, float scale = 0.05f) {
    Rng rng = Rng::derive(seed, "randomize");
    for (auto& [name, t] : model.p.params) {
        auto d = t.data();
        const bool all_zero = std::all_of(d.begin(), d.end(), [](float v) { return v == 0.0f; });
        if (!all_zero) continue;
        Tensor fresh(t.shape());
        for (auto& v : fresh.mut()) v = rng.normal() * scale;
        fresh.set_requires_grad(true);
        t = fresh;
    }
}

struct ComposedCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t coords = 0;
};

// Finite-difference check of the full pre-training loss in the f64 path:
// loss(p) = mean((eps - dit(x_t, t, enc(x0, t)))^2) as a function of each
// parameter tensor, a few sampled coordinates per tensor.
inline ComposedCheckResult composed_loss_grad_check(const EncoderModel& enc_f32,
                                                    const DiTModel& dit_f32,
                                                    std::uint64_t seed,
                                                    int coords_per_tensor) {
    auto enc = to_f64(enc_f32);
    auto dit = to_f64(dit_f32);
    Rng rng = Rng::derive(seed, "composed");
    const std::int64_t n = 2;
    const int size = enc.cfg.input_size;
    const int ch = enc.cfg.in_channels;
    Tensor x0f = randn({n, ch, size, size}, rng);
    for (auto& v : x0f.mut()) v = std::tanh(v);
    Tensor epsf = randn(x0f.shape(), rng);
    auto x0 = x0f.cast<double>();
    auto eps = epsf.cast<double>();
    std::vector<int> ts = {static_cast<int>(rng.uniform_int(1000)),
                           static_cast<int>(rng.uniform_int(1000))};
    // q_sample at fixed alpha_bar values (any valid mix works for the check).
    Tensor64 x_t(x0.shape());
    {
        auto xv = x0.data();
        auto ev = eps.data();
        auto ov = x_t.mut();
        const std::int64_t per = x0.numel() / n;
        for (std::int64_t i = 0; i < n; ++i) {
            const double abar = 0.2 + 0.5 * static_cast<double>(i) / n;
            for (std::int64_t j = 0; j < per; ++j) {
                ov[i * per + j] = std::sqrt(abar) * xv[i * per + j] +
                                  std::sqrt(1 - abar) * ev[i * per + j];
            }
        }
    }

    auto loss_with = [&](const std::string& owner, const std::string& name,
                         const Tensor64& replacement) {
        auto enc_copy = enc;
        auto dit_copy = dit;
        if (owner == "enc") {
            enc_copy.p.at(name) = replacement;
            enc_copy.p.at(name).set_requires_grad(true);
        } else {
            dit_copy.p.at(name) = replacement;
            dit_copy.p.at(name).set_requires_grad(true);
        }
        auto v = encoder_forward(enc_copy, x0, ts);
        auto eps_hat = dit_forward(dit_copy, x_t, ts, v);
        auto diff = sub(eps, eps_hat);
        return mean(mul(diff, diff));
    };

    ComposedCheckResult result;
    auto run_for = [&](const std::string& owner, auto& params) {
        for (auto& [name, t] : params) {
            auto res = grad_check(
                [&](const Tensor64& p) { return loss_with(owner, name, p); }, t,
                /*eps=*/1e-5, /*max_coords=*/coords_per_tensor,
                /*coord_seed=*/seed ^ std::hash<std::string>{}(owner + name));
            result.coords += res.coords_checked;
            if (res.max_rel_err > result.max_rel_err) {
                result.max_rel_err = res.max_rel_err;
                result.worst_param = owner + "." + name;
            }
        }
    };
    run_for("enc", enc.p.params);
    run_for("dit", dit.p.params);
    return result;
}

// Tiny configs for fast unit tests.
inline DiTConfig dit_micro() {
    DiTConfig c;
    c.input_size = 8;
    c.in_channels = 1;
    c.patch = 4;
    c.hidden = 16;
    c.depth = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.cond_dim = 8;
    c.t_embed_dim = 8;
    return c;
}

inline EncoderConfig encoder_micro() {
    EncoderConfig c;
    c.input_size = 8;
    c.in_channels = 1;
    c.base = 8;
    c.blocks = 1;
    c.attention_resolutions = {4};
    c.heads = 2;
    c.channel_multipliers = {1, 2};
    c.embed_dim = 8;
    c.norm_groups = 4;
    return c;
}

}  // namespace dier::testing
