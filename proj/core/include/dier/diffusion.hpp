#pragma once

#include <functional>
#include <span>

#include "dier/rng.hpp"
#include "dier/schedule.hpp"
#include "dier/tensor.hpp"

namespace dier {

// Noise-prediction callback: (x_t, t) -> eps_hat, same shape as x_t.
using Predictor = std::function<Tensor(const Tensor&, int)>;

enum class SampleMode { Ddpm, Ddim };

// Marginal draw: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);
// Same, with a per-item timestep for batched [N,...] inputs.
Tensor q_sample_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps,
                      const NoiseSchedule& sched);

// Ancestral step x_t -> x_{t-1}: posterior mean plus sigma_t z for t > 0,
// sigma_t^2 = beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
Tensor ddpm_reverse_step(const Tensor& x_t, const Tensor& eps_hat, int t,
                         const NoiseSchedule& sched, Rng& rng);

// Deterministic DDIM move between arbitrary levels (eta = 0). t_prev < t
// decodes, t_prev > t inverts; t == -1 denotes the clean endpoint where
// alpha_bar is 1 by convention.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched);

// Implied clean sample (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t).
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

// DDIM inversion of clean data along an ascending grid ending at T-1; the
// result is the deterministic latent code of x0 under the predictor.
Tensor stochastic_encode(const Tensor& x0, const Predictor& predictor,
                         std::span<const int> ascending_grid, const NoiseSchedule& sched);

// Reverse chain over a descending grid ending at 0. DDIM mode is a pure
// function of (x_T, predictor, grid); DDPM mode consumes rng for t > 0.
Tensor sample_from_noise(const Tensor& x_t, const Predictor& predictor,
                         std::span<const int> descending_grid, const NoiseSchedule& sched,
                         SampleMode mode, Rng* rng);

// Uniformly spaced ascending grid {~0 .. T-1} with `steps` entries.
std::vector<int> inversion_grid(int timesteps, int steps);

}  // namespace dier
