#pragma once

#include <string>

#include "dier/nets.hpp"
#include "dier/probe.hpp"
#include "dier/training.hpp"

namespace dier {

struct DataOptions {
    std::string path = "synth:shapes:4x500x16";
    std::int64_t train_cap = 5000;
    std::int64_t test_cap = 1000;
    bool augment_flip = true;
    int target_size = 0;  // 0 = model input size
};

// Parsed from `key = value` lines under [section] headers; sections are
// data, model, diffusion, train, probe. Unknown sections or keys reject.
struct RunConfig {
    DataOptions data;
    std::string model_preset = "tiny";
    DiTConfig dit = dit_tiny();
    EncoderConfig encoder = encoder_small_images();
    float beta_start = 1e-4f;
    float beta_end = 0.02f;
    TrainConfig train;
    ProbeConfig probe;

    // probe.peak_lr <= 0 means "2x the pre-training rate".
    float resolved_probe_peak_lr() const {
        return probe.peak_lr > 0 ? probe.peak_lr : 2.0f * train.learning_rate;
    }
    void apply_preset(const std::string& name);
    void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
// Canonical echo with every value resolved (the "effective config").
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace dier
