#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dier/data.hpp"
#include "dier/diffusion.hpp"
#include "dier/nets.hpp"

namespace dier {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 128;
    float learning_rate = 1e-4f;
    std::uint64_t seed = 0;
    int timesteps = 1000;
    std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::int64_t log_every = 50;
    std::int64_t max_steps = 0;  // 0 = run the configured epochs
    float grad_clip = 1.0f;      // global-norm clip; 0 disables
    float loss_ema = 0.99f;

    void validate() const;
};

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
    bool decoupled = false;  // true = AdamW (decay applied to the parameter)
};

struct OptimizerState {
    AdamConfig hp;
    std::int64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

// Bias-corrected Adam/AdamW update; grads looked up per parameter (empty
// span = zero gradient), scaled by grad_scale before use.
void adam_step(std::vector<NamedParam>& params,
               const std::function<std::span<const float>(const NamedParam&)>& grad_of,
               OptimizerState& state, float lr, float grad_scale = 1.0f);

// Linear ramp 0 -> max_lr over warmup_steps, then linear decay to 0 at
// total_steps. (Pre-training itself uses a constant rate; this drives the
// probe optimizer.)
float lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                  float max_lr);

struct LossDraw {
    Tensor loss;          // scalar, on the active tape
    std::vector<int> t;   // per-item draws, kept for diagnostics
};

// Per-item t ~ U{0..T-1} and eps ~ N(0,I) from rng; loss = mean over batch
// and pixels of ||eps - dit(x_t, t, encoder(x0, t))||^2 (w_t = 1).
LossDraw diffusion_loss(const EncoderModel& enc, const DiTModel& dit, const Tensor& x0,
                        const NoiseSchedule& sched, Rng& rng);

struct TraceRow {
    std::int64_t step = 0;
    float loss = 0;
    float lr = 0;
    double wall_ms = 0;
};

struct TrainingReport {
    std::vector<TraceRow> trace;
    double wall_seconds = 0;
    std::vector<std::string> checkpoint_paths;
    float initial_smoothed = 0;
    float final_smoothed = 0;
    std::int64_t steps_run = 0;
};

struct FitOptions {
    std::string run_dir;      // when set: loss.csv + checkpoints written here
    std::string resume_from;  // checkpoint path to continue from
    std::string config_text;  // echoed into checkpoints
};

// Joint pre-training of encoder and DiT with constant-LR Adam. Deterministic
// for a fixed seed; resume from a checkpoint replays the exact stream.
TrainingReport fit(EncoderModel& enc, DiTModel& dit, const PixelDataset& data,
                   const NoiseSchedule& sched, const TrainConfig& cfg, const FitOptions& opts);

std::vector<NamedParam> collect_params(EncoderModel& enc, DiTModel& dit);

}  // namespace dier
