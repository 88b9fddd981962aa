#pragma once

#include <map>
#include <string>

#include "dier/nets.hpp"
#include "dier/schedule.hpp"
#include "dier/tensor.hpp"
#include "dier/training.hpp"

namespace dier {

// Versioned binary container. Layout (all integers little-endian):
//   "DIER" | u32 version | u64 config_len + config text |
//   u64 tensor_count | per tensor, sorted by name:
//     u64 name_len + name | u64 ndim | u64 dims[ndim] | u8 dtype (0 = f32) |
//     raw little-endian f32 payload |
//   u64 rng_key | u64 rng_counter | u64 step
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::string config_text;
    std::map<std::string, Tensor> tensors;
    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
    std::uint64_t step = 0;
};

// Serializes without renaming; save_checkpoint = this + atomic rename.
void write_checkpoint_file(const std::string& path, const CheckpointData& data);
void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Full training bundle: both models, optimizer moments, schedule config,
// RNG stream and step counter.
struct TrainState {
    EncoderModel encoder;
    DiTModel dit;
    OptimizerState opt;
    NoiseSchedule sched;
    TrainConfig train_cfg;
    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
    std::uint64_t step = 0;
    std::string config_text;
};

void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

// ---- embedding export (probe tables) ----
struct EmbeddingTable;  // defined in probe.hpp

enum class EmbeddingFormat { Csv, Bin };

// csv: header "label,v0,...,v{d-1}", 9 significant digits per value.
// bin: u32 N | u32 d | i32 labels[N] | f32 payload[N*d], little-endian.
void export_embeddings(const EmbeddingTable& table, const std::string& path,
                       EmbeddingFormat format);
EmbeddingTable import_embeddings(const std::string& path, EmbeddingFormat format);

}  // namespace dier
