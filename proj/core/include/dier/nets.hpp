#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dier/ops.hpp"
#include "dier/rng.hpp"

namespace dier {

struct DiTConfig {
    int input_size = 32;
    int in_channels = 1;
    int patch = 2;
    int hidden = 192;
    int depth = 12;
    int heads = 3;
    int mlp_ratio = 4;
    int cond_dim = 1024;    // width d of the conditioning vector v
    int t_embed_dim = 256;  // sinusoidal width fed to the timestep MLP

    void validate() const;
    int grid_side() const { return input_size / patch; }
    int token_count() const { return grid_side() * grid_side(); }
};

struct EncoderConfig {
    int input_size = 32;
    int in_channels = 1;
    int base = 128;
    int blocks = 2;
    std::vector<int> attention_resolutions{16, 8};
    int heads = 4;
    std::vector<int> channel_multipliers{1, 2, 3, 4};
    int embed_dim = 1024;  // output width d
    int norm_groups = 32;

    void validate() const;
    int stages() const { return static_cast<int>(channel_multipliers.size()); }
    int t_embed_dim() const { return 4 * base; }
};

template <typename S>
struct ParamMapT {
    std::map<std::string, TensorT<S>> params;

    void add(const std::string& name, TensorT<S> t);
    TensorT<S>& at(const std::string& name);
    const TensorT<S>& at(const std::string& name) const;
    std::int64_t element_count() const;
};

template <typename S>
struct EncoderModelT {
    EncoderConfig cfg;
    ParamMapT<S> p;
};

template <typename S>
struct DiTModelT {
    DiTConfig cfg;
    ParamMapT<S> p;
    TensorT<S> pos_embed;  // fixed 2D sin-cos, [L, hidden], not learned
};

using EncoderModel = EncoderModelT<float>;
using DiTModel = DiTModelT<float>;

// [sin(t w_i) ; cos(t w_i)], w_i = exp(-ln(10000) i / (dim/2)); shape [N, dim].
template <typename S>
TensorT<S> timestep_embedding(std::span<const int> t, int dim);

// Fixed 2D sin-cos positional table, [side*side, dim]; dim % 4 == 0.
template <typename S>
TensorT<S> sincos_pos_embed_2d(int dim, int side);

// v_t = encoder(x0, t); x0 [N,C,H,W] in [-1,1], one timestep per item.
template <typename S>
TensorT<S> encoder_forward(const EncoderModelT<S>& model, const TensorT<S>& x0,
                           std::span<const int> t);

// eps_hat = dit(x_t, t, v); conditioning c = t_embed + proj(v) feeds every
// block's adaLN modulation head.
template <typename S>
TensorT<S> dit_forward(const DiTModelT<S>& model, const TensorT<S>& x_t, std::span<const int> t,
                       const TensorT<S>& v);

// [N,C,H,W] -> [N, (H/p)(W/p), p*p*C] and its exact inverse.
template <typename S>
TensorT<S> patchify(const TensorT<S>& x, int p);
template <typename S>
TensorT<S> unpatchify(const TensorT<S>& tokens, int p, int channels, int side);

// Truncated-normal(0.02) projections, zero adaLN heads and output projection
// (adaLN-Zero), unit norm affines; byte-deterministic per seed.
EncoderModel init_encoder(const EncoderConfig& cfg, std::uint64_t seed);
DiTModel init_dit(const DiTConfig& cfg, std::uint64_t seed);

EncoderModelT<double> to_f64(const EncoderModel& m);
DiTModelT<double> to_f64(const DiTModel& m);

// Config presets. tiny/small/base follow the published backbone scalings;
// nano is the CI-speed desk configuration.
DiTConfig dit_tiny(int input_size = 32, int in_channels = 1);
DiTConfig dit_small(int input_size = 64, int in_channels = 3);
DiTConfig dit_base(int input_size = 256, int in_channels = 3);
DiTConfig dit_nano(int in_channels = 1);
EncoderConfig encoder_small_images(int input_size = 32, int in_channels = 1);
EncoderConfig encoder_large_images(int input_size = 256, int in_channels = 3);
EncoderConfig encoder_nano(int in_channels = 1);

}  // namespace dier
