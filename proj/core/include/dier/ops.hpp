#pragma once

#include <memory>
#include <span>
#include <vector>

#include "dier/rng.hpp"
#include "dier/tape.hpp"
#include "dier/tensor.hpp"

namespace dier {

// Every op is a pure function: fresh output tensor, inputs untouched. When a
// tape is active and some input is differentiable, the op records a backward
// closure; otherwise it is a plain forward computation.

// ---- pointwise / broadcast (trailing-dimension alignment) ----
template <typename S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> scale(const TensorT<S>& x, S c);
template <typename S> TensorT<S> add_scalar(const TensorT<S>& x, S c);
template <typename S> TensorT<S> silu(const TensorT<S>& x);
template <typename S> TensorT<S> gelu(const TensorT<S>& x);  // tanh approximation
template <typename S> TensorT<S> sqrt(const TensorT<S>& x);
template <typename S> TensorT<S> exp(const TensorT<S>& x);
template <typename S> TensorT<S> log(const TensorT<S>& x);
template <typename S> TensorT<S> sin(const TensorT<S>& x);

// ---- structure ----
using IndexVec = std::shared_ptr<const std::vector<std::int64_t>>;

template <typename S> TensorT<S> reshape(const TensorT<S>& x, Shape shape);
// out[i] = idx[i] >= 0 ? x[idx[i]] : 0; gradient scatter-adds. This one
// primitive backs im2col, axis permutation, slicing and flips.
template <typename S> TensorT<S> gather(const TensorT<S>& x, IndexVec idx, Shape out_shape);
template <typename S> TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& axes);
template <typename S> TensorT<S> transpose_last2(const TensorT<S>& x);
template <typename S> TensorT<S> slice_last(const TensorT<S>& x, std::int64_t start, std::int64_t len);

// ---- reductions ----
template <typename S> TensorT<S> sum(const TensorT<S>& x);
template <typename S> TensorT<S> mean(const TensorT<S>& x);
// Mean over the trailing k dimensions.
template <typename S> TensorT<S> mean_tail(const TensorT<S>& x, int k);

// ---- linear algebra / nn ----
// Batched matrix product [..,m,k] x [..,k,n] with broadcastable batch dims.
template <typename S> TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> softmax(const TensorT<S>& x, int axis = -1);
// Per-row zero mean / unit variance over the last dim (biased variance,
// eps inside the square root).
template <typename S> TensorT<S> normalize_rows(const TensorT<S>& x, S eps);
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5));
// GroupNorm over [N,C,H,W]; gamma/beta are per-channel.
template <typename S>
TensorT<S> group_norm(const TensorT<S>& x, int groups, const TensorT<S>& gamma,
                      const TensorT<S>& beta, S eps = S(1e-5));
// Cross-correlation with zero padding, x:[N,C,H,W], w:[O,C,kh,kw].
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, int stride, int pad);
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias, int stride,
                  int pad);
// Mean softmax cross-entropy over rows of [N,C].
template <typename S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& logits, std::span<const int> labels);

// ---- index builders (memoized) ----
IndexVec im2col_indices(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, int kh,
                        int kw, int stride, int pad);
IndexVec permute_indices(const Shape& in_shape, const std::vector<int>& axes);
IndexVec slice_last_indices(const Shape& in_shape, std::int64_t start, std::int64_t len);

// ---- plain tensor helpers (no tape interaction) ----
Tensor randn(Shape shape, Rng& rng);
template <typename S> bool all_finite(const TensorT<S>& x);

// Number of worker threads used by the heavy kernels (DIER_THREADS env
// override; results are bit-identical for any thread count).
int num_threads();

}  // namespace dier
