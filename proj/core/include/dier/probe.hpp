#pragma once

#include <span>
#include <string>
#include <vector>

#include "dier/data.hpp"
#include "dier/diffusion.hpp"
#include "dier/nets.hpp"

namespace dier {

// Frozen embedding matrix with labels, extracted at one timestep.
struct EmbeddingTable {
    Tensor vectors;  // [N, d]
    std::vector<int> labels;
    int class_count = 0;
    int timestep = 0;
    std::string split;
    std::string source;
};

struct ProbeConfig {
    int epochs = 100;
    int batch_size = 256;
    int warmup_epochs = 10;
    float peak_lr = 0.0f;  // <= 0: resolved to 2x pre-training LR by RunConfig
    float weight_decay = 0.05f;
    bool standardize = true;
    std::uint64_t seed = 0;
};

struct ProbeResult {
    float top1 = 0.0f;
    float top5 = 0.0f;
    bool has_top5 = false;  // reported only when class_count > 10
    Tensor weight;          // [d, C]
    Tensor bias;            // [C]
};

// One v per sample at the given timestep; encoder stays frozen (no tape).
EmbeddingTable extract_embeddings(const EncoderModel& model, const PixelDataset& data, int t,
                                  int batch_size = 256);

// Raw pixels as "embeddings" — the flat-pixel baseline probe input.
EmbeddingTable pixel_table(const PixelDataset& data, const std::string& split);

// Single linear layer on frozen embeddings, softmax cross-entropy, AdamW
// with warmup + linear decay. Deterministic per config seed.
ProbeResult train_linear_probe(const EmbeddingTable& train, const EmbeddingTable& eval,
                               const ProbeConfig& cfg);

// Percent of rows whose label ranks inside the top k logits; ties broken by
// lower class index.
float topk_accuracy(const Tensor& logits, std::span<const int> labels, int k);

struct SweepReport {
    std::vector<int> timesteps;
    std::vector<float> top1;  // NaN where a point failed
    std::vector<float> top5;  // NaN where absent
    int best_timestep = -1;
    float best_top1 = 0.0f;
};

// Fills best_timestep/best_top1 (smallest timestep wins ties).
void finalize_sweep(SweepReport& report);
SweepReport timestep_sweep(const EncoderModel& model, const PixelDataset& train,
                           const PixelDataset& test, std::span<const int> grid,
                           const ProbeConfig& cfg);
void write_sweep_csv(const SweepReport& report, const std::string& path);

// "start:end:step" -> {start, start+step, ..., <= end}; 999 is auto-appended
// for end=999, step=100 so the default grid is the 11-point one.
std::vector<int> parse_timestep_grid(const std::string& spec, int timesteps);

enum class ReconMode { Code, Noise };

struct ReconstructReport {
    std::vector<float> psnr;
    Tensor reconstructions;  // [N,C,H,W], clipped to [-1,1]
    Tensor truth;
    bool untrained_warning = false;
};

// mode=Code: stochastic_encode then DDIM decode; mode=Noise: x_T ~ N(0,I)
// decoded the same way. Both condition on v = encoder(ground truth, t) at
// each step's t. predictor_override is a test seam.
ReconstructReport reconstruct_report(const EncoderModel& enc, const DiTModel& dit,
                                     const PixelDataset& sample, const NoiseSchedule& sched,
                                     ReconMode mode, int steps, std::uint64_t seed,
                                     const Predictor* predictor_override = nullptr);

}  // namespace dier
