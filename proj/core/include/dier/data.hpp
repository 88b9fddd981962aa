#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dier/rng.hpp"
#include "dier/tensor.hpp"

namespace dier {

// Raw byte-valued image set, one label per image.
struct LabeledImageSet {
    std::string name;
    int channels = 1;
    int height = 0;
    int width = 0;
    int class_count = 0;
    std::vector<std::uint8_t> images;  // N * C * H * W, row-major
    std::vector<int> labels;

    std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t image_bytes() const {
        return static_cast<std::int64_t>(channels) * height * width;
    }
};

// IDX (big-endian) reader/writer; magics 0x00000803 (images), 0x00000801
// (labels). Labels are byte-valued.
LabeledImageSet read_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const LabeledImageSet& set, const std::string& images_path,
               const std::string& labels_path);

// Class-defining shapes (disc, square, cross, stripes, ...) at random
// position/scale on noisy backgrounds, so raw-pixel probing is weak while
// shape identity stays learnable. Interleaved labels (i % classes), so any
// prefix subset stays class-balanced. Deterministic per seed.
LabeledImageSet synth_shapes(int n_per_class, int classes, int size, std::uint64_t seed);

// Rendered digit glyphs (10 classes) with jitter and noise; desk-scale
// stand-in for handwritten-digit data when no IDX files are available.
LabeledImageSet synth_digits(int n_per_class, int size, std::uint64_t seed);

LabeledImageSet take_first(const LabeledImageSet& set, std::int64_t n);

// Preprocessed split: nearest-neighbor resize, u8 -> f32 via x/127.5 - 1.
struct PixelDataset {
    std::string name;
    Tensor images;  // [N, C, H, W] in [-1, 1]
    std::vector<int> labels;
    int class_count = 0;
    bool augment_flip = false;
    std::uint64_t seed = 0;

    std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
};

PixelDataset preprocess(const LabeledImageSet& set, int target_size, bool augment_flip,
                        std::uint64_t seed);

// Epoch ordering and flip decisions are pure functions of (seed, epoch).
std::vector<std::int64_t> epoch_order(const PixelDataset& data, std::int64_t epoch);
std::vector<std::uint8_t> epoch_flips(const PixelDataset& data, std::int64_t epoch);
// Rows gathered (and flipped where flips[index] != 0) into [B, C, H, W].
Tensor assemble_batch(const PixelDataset& data, std::span<const std::int64_t> indices,
                      std::span<const std::uint8_t> flips);

struct DatasetPair {
    LabeledImageSet train;
    LabeledImageSet test;
};

// Resolves a --data argument: "synth:shapes:<classes>x<per-class>x<size>",
// "synth:digits:<per-class>x<size>", or a directory holding the four
// conventional IDX files (train-images-idx3-ubyte, train-labels-idx1-ubyte,
// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte).
DatasetPair load_dataset_spec(const std::string& spec, std::uint64_t seed);

}  // namespace dier
