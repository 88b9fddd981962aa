#pragma once

#include <vector>

#include "dier/errors.hpp"

namespace dier {

// Per-timestep noise tables: beta_t, alpha_t = 1 - beta_t and the cumulative
// product alpha_bar_t. Timesteps are 0-indexed, t in {0 .. T-1}.
struct NoiseSchedule {
    int timesteps = 0;
    float beta_start = 0.0f;
    float beta_end = 0.0f;
    std::vector<float> betas;
    std::vector<float> alphas;
    std::vector<float> alpha_bars;

    float beta(int t) const { return betas[check(t)]; }
    float alpha(int t) const { return alphas[check(t)]; }
    // alpha_bar(-1) == 1 by convention (the clean-data endpoint).
    double alpha_bar(int t) const {
        if (t == -1) return 1.0;
        return alpha_bars[check(t)];
    }

    std::size_t check(int t) const {
        if (t < 0 || t >= timesteps) {
            throw IndexError("timestep " + std::to_string(t) + " out of range [0," +
                             std::to_string(timesteps) + ")");
        }
        return static_cast<std::size_t>(t);
    }
};

// Linear beta ramp inclusive of both endpoints; alpha_bar accumulated in f64.
NoiseSchedule make_linear_schedule(int timesteps, float beta_start, float beta_end);

}  // namespace dier
