#include "dier/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace dier {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "q_sample");
    const double abar = sched.alpha_bar(t);
    const double c0 = std::sqrt(abar);
    const double c1 = std::sqrt(1.0 - abar);
    Tensor out(x0.shape());
    auto xv = x0.data();
    auto ev = eps.data();
    auto ov = out.mut();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        ov[i] = static_cast<float>(c0 * xv[i] + c1 * ev[i]);
    }
    return out;
}

Tensor q_sample_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps,
                      const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "q_sample");
    if (x0.ndim() < 1 || x0.dim(0) != static_cast<std::int64_t>(t.size())) {
        throw DimensionError("q_sample_batch: item count mismatch");
    }
    const std::int64_t n = x0.dim(0);
    const std::int64_t per = x0.numel() / std::max<std::int64_t>(n, 1);
    Tensor out(x0.shape());
    auto xv = x0.data();
    auto ev = eps.data();
    auto ov = out.mut();
    for (std::int64_t i = 0; i < n; ++i) {
        const double abar = sched.alpha_bar(t[static_cast<std::size_t>(i)]);
        const double c0 = std::sqrt(abar);
        const double c1 = std::sqrt(1.0 - abar);
        const std::int64_t base = i * per;
        for (std::int64_t j = 0; j < per; ++j) {
            ov[base + j] = static_cast<float>(c0 * xv[base + j] + c1 * ev[base + j]);
        }
    }
    return out;
}

Tensor ddpm_reverse_step(const Tensor& x_t, const Tensor& eps_hat, int t,
                         const NoiseSchedule& sched, Rng& rng) {
    check_same_shape(x_t, eps_hat, "ddpm_reverse_step");
    sched.check(t);
    const double beta = sched.beta(t);
    const double alpha = sched.alpha(t);
    const double abar = sched.alpha_bar(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double eps_coef = beta / std::sqrt(1.0 - abar);
    Tensor out(x_t.shape());
    auto xv = x_t.data();
    auto ev = eps_hat.data();
    auto ov = out.mut();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        ov[i] = static_cast<float>(inv_sqrt_alpha * (xv[i] - eps_coef * ev[i]));
    }
    if (t > 0) {
        const double abar_prev = sched.alpha_bar(t - 1);
        const double var = (1.0 - abar_prev) / (1.0 - abar) * beta;
        const float sigma = static_cast<float>(std::sqrt(var));
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            ov[i] += sigma * rng.normal();
        }
    }
    return out;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_hat, "predict_x0");
    const double abar = sched.alpha_bar(t);
    const double inv = 1.0 / std::sqrt(abar);
    const double c = std::sqrt(1.0 - abar);
    Tensor out(x_t.shape());
    auto xv = x_t.data();
    auto ev = eps_hat.data();
    auto ov = out.mut();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        ov[i] = static_cast<float>(inv * (xv[i] - c * ev[i]));
    }
    return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_hat, "ddim_step");
    if (t == t_prev) {
        throw UsageError("ddim_step with t == t_prev == " + std::to_string(t));
    }
    const double abar_t = sched.alpha_bar(t);
    const double abar_p = sched.alpha_bar(t_prev);
    const double inv = 1.0 / std::sqrt(abar_t);
    const double c_t = std::sqrt(1.0 - abar_t);
    const double c0 = std::sqrt(abar_p);
    const double c1 = std::sqrt(1.0 - abar_p);
    Tensor out(x_t.shape());
    auto xv = x_t.data();
    auto ev = eps_hat.data();
    auto ov = out.mut();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double x0 = inv * (xv[i] - c_t * ev[i]);
        ov[i] = static_cast<float>(c0 * x0 + c1 * ev[i]);
    }
    return out;
}

Tensor stochastic_encode(const Tensor& x0, const Predictor& predictor,
                         std::span<const int> ascending_grid, const NoiseSchedule& sched) {
    if (ascending_grid.empty()) {
        throw UsageError("stochastic_encode needs a non-empty grid");
    }
    for (std::size_t i = 1; i < ascending_grid.size(); ++i) {
        if (ascending_grid[i] <= ascending_grid[i - 1]) {
            throw UsageError("stochastic_encode grid must be strictly ascending");
        }
    }
    Tensor x = x0;
    int level = -1;  // clean endpoint, alpha_bar = 1
    for (int target : ascending_grid) {
        Tensor eps_hat = predictor(x, target);
        x = ddim_step(x, eps_hat, level, target, sched);
        level = target;
    }
    return x;
}

Tensor sample_from_noise(const Tensor& x_t, const Predictor& predictor,
                         std::span<const int> descending_grid, const NoiseSchedule& sched,
                         SampleMode mode, Rng* rng) {
    if (descending_grid.empty()) {
        throw UsageError("sample_from_noise needs a non-empty grid");
    }
    for (std::size_t i = 1; i < descending_grid.size(); ++i) {
        if (descending_grid[i] >= descending_grid[i - 1]) {
            throw UsageError("sample_from_noise grid must be strictly descending");
        }
    }
    if (mode == SampleMode::Ddpm && rng == nullptr) {
        throw UsageError("ddpm sampling needs an rng");
    }
    Tensor x = x_t;
    for (std::size_t i = 0; i < descending_grid.size(); ++i) {
        const int t = descending_grid[i];
        Tensor eps_hat = predictor(x, t);
        if (mode == SampleMode::Ddpm) {
            x = ddpm_reverse_step(x, eps_hat, t, sched, *rng);
        } else {
            const int t_next = i + 1 < descending_grid.size()
                                   ? descending_grid[i + 1]
                                   : -1;  // final move lands on clean data
            x = ddim_step(x, eps_hat, t, t_next, sched);
        }
    }
    return x;
}

std::vector<int> inversion_grid(int timesteps, int steps) {
    if (steps < 1 || steps > timesteps) {
        throw UsageError("inversion grid needs 1 <= steps <= T");
    }
    std::vector<int> grid(static_cast<std::size_t>(steps));
    if (steps == 1) {
        grid[0] = timesteps - 1;
        return grid;
    }
    for (int i = 0; i < steps; ++i) {
        grid[static_cast<std::size_t>(i)] = static_cast<int>(
            std::llround(static_cast<double>(i) * (timesteps - 1) / (steps - 1)));
    }
    grid.back() = timesteps - 1;
    // llround can collide on coarse grids; enforce strict ascent.
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (grid[i] <= grid[i - 1]) grid[i] = grid[i - 1] + 1;
    }
    return grid;
}

}  // namespace dier
