#pragma once

#include <string>

#include "dier/tensor.hpp"

namespace dier {

// PSNR between two [-1,1] images (any equal shape), computed on the [0,1]
// mapping with peak 1; clipped inputs, capped at cap_db (identity -> cap).
float psnr(const Tensor& a, const Tensor& b, float cap_db = 99.0f);

// Binary PPM (P6). img is [C,H,W] with C in {1,3}, values in [-1,1].
void write_ppm(const std::string& path, const Tensor& img);

// Side-by-side grid: one row per sample, left column from `left`, right
// column from `right`; both [N,C,H,W].
void write_pair_grid_ppm(const std::string& path, const Tensor& left, const Tensor& right);

}  // namespace dier
