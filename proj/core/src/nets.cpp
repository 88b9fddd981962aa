#include "dier/nets.hpp"

#include <algorithm>
#include <cmath>

namespace dier {

// ---------------- configs ----------------

void DiTConfig::validate() const {
    if (input_size < 1 || in_channels < 1 || depth < 1 || mlp_ratio < 1 || cond_dim < 1) {
        throw ConfigError("dit config has non-positive field");
    }
    if (patch < 1 || input_size % patch != 0) {
        throw ConfigError("input_size " + std::to_string(input_size) +
                          " not divisible by patch " + std::to_string(patch));
    }
    if (heads < 1 || hidden % heads != 0) {
        throw ConfigError("hidden " + std::to_string(hidden) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (hidden % 4 != 0) {
        throw ConfigError("hidden must be divisible by 4 for the 2D sin-cos positional table");
    }
    if (t_embed_dim % 2 != 0) {
        throw ConfigError("t_embed_dim must be even");
    }
}

void EncoderConfig::validate() const {
    if (input_size < 1 || in_channels < 1 || base < 1 || blocks < 1 || embed_dim < 1 ||
        heads < 1 || norm_groups < 1) {
        throw ConfigError("encoder config has non-positive field");
    }
    if (channel_multipliers.empty()) {
        throw ConfigError("encoder needs at least one channel multiplier");
    }
    for (std::size_t i = 1; i < channel_multipliers.size(); ++i) {
        if (channel_multipliers[i] < channel_multipliers[i - 1]) {
            throw ConfigError("channel multipliers must be non-decreasing");
        }
    }
    int side = input_size;
    std::vector<int> sides;
    for (std::size_t s = 0; s < channel_multipliers.size(); ++s) {
        sides.push_back(side);
        const int c = base * channel_multipliers[s];
        const int groups = std::min(norm_groups, c);
        if (c % groups != 0) {
            throw ConfigError("stage channels " + std::to_string(c) +
                              " not divisible by norm groups " + std::to_string(groups));
        }
        if (side % 2 != 0 && s + 1 < channel_multipliers.size()) {
            throw ConfigError("feature side " + std::to_string(side) +
                              " cannot be downsampled further");
        }
        side /= 2;
    }
    for (int r : attention_resolutions) {
        if (std::find(sides.begin(), sides.end(), r) == sides.end()) {
            throw ConfigError("attention resolution " + std::to_string(r) +
                              " is not a reachable feature-map side");
        }
    }
    for (std::size_t s = 0; s < channel_multipliers.size(); ++s) {
        const int c = base * channel_multipliers[s];
        const bool has_attn = std::find(attention_resolutions.begin(),
                                        attention_resolutions.end(),
                                        sides[s]) != attention_resolutions.end();
        if (has_attn && c % heads != 0) {
            throw ConfigError("stage channels " + std::to_string(c) +
                              " not divisible by attention heads " + std::to_string(heads));
        }
    }
}

// ---------------- param map ----------------

template <typename S>
void ParamMapT<S>::add(const std::string& name, TensorT<S> t) {
    t.set_requires_grad(true);
    auto [it, inserted] = params.emplace(name, std::move(t));
    if (!inserted) {
        throw ConfigError("duplicate parameter name: " + name);
    }
    (void)it;
}

template <typename S>
TensorT<S>& ParamMapT<S>::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter: " + name);
    return it->second;
}

template <typename S>
const TensorT<S>& ParamMapT<S>::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter: " + name);
    return it->second;
}

template <typename S>
std::int64_t ParamMapT<S>::element_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

template struct ParamMapT<float>;
template struct ParamMapT<double>;

// ---------------- embeddings ----------------

template <typename S>
TensorT<S> timestep_embedding(std::span<const int> t, int dim) {
    if (dim < 2 || dim % 2 != 0) {
        throw ConfigError("timestep embedding needs an even dim, got " + std::to_string(dim));
    }
    const int half = dim / 2;
    const std::int64_t n = static_cast<std::int64_t>(t.size());
    TensorT<S> out({n, dim});
    auto ov = out.mut();
    for (std::int64_t i = 0; i < n; ++i) {
        const double tv = static_cast<double>(t[static_cast<std::size_t>(i)]);
        for (int j = 0; j < half; ++j) {
            const double w = std::exp(-std::log(10000.0) * static_cast<double>(j) /
                                      static_cast<double>(half));
            ov[i * dim + j] = static_cast<S>(std::sin(tv * w));
            ov[i * dim + half + j] = static_cast<S>(std::cos(tv * w));
        }
    }
    return out;
}

namespace {

// 1D sin-cos table over positions 0..count-1 with `dim` features.
template <typename S>
void fill_sincos_1d(std::span<S> out, int count, int dim, int stride, int offset) {
    const int half = dim / 2;
    for (int p = 0; p < count; ++p) {
        for (int j = 0; j < half; ++j) {
            const double w = 1.0 / std::pow(10000.0, static_cast<double>(j) /
                                                        static_cast<double>(half));
            out[static_cast<std::size_t>(p * stride + offset + j)] =
                static_cast<S>(std::sin(p * w));
            out[static_cast<std::size_t>(p * stride + offset + half + j)] =
                static_cast<S>(std::cos(p * w));
        }
    }
}

}  // namespace

template <typename S>
TensorT<S> sincos_pos_embed_2d(int dim, int side) {
    if (dim % 4 != 0) throw ConfigError("positional dim must be divisible by 4");
    const int l = side * side;
    TensorT<S> out({l, dim});
    auto ov = out.mut();
    const int half = dim / 2;
    std::vector<S> row_tab(static_cast<std::size_t>(side * half));
    std::vector<S> col_tab(static_cast<std::size_t>(side * half));
    fill_sincos_1d<S>(row_tab, side, half, half, 0);
    fill_sincos_1d<S>(col_tab, side, half, half, 0);
    for (int gy = 0; gy < side; ++gy) {
        for (int gx = 0; gx < side; ++gx) {
            S* dst = ov.data() + static_cast<std::size_t>((gy * side + gx) * dim);
            const S* ry = row_tab.data() + static_cast<std::size_t>(gy * half);
            const S* cx = col_tab.data() + static_cast<std::size_t>(gx * half);
            for (int j = 0; j < half; ++j) dst[j] = ry[j];
            for (int j = 0; j < half; ++j) dst[half + j] = cx[j];
        }
    }
    return out;
}

// ---------------- shared forward helpers ----------------

namespace {

template <typename S>
TensorT<S> linear(const TensorT<S>& x, const ParamMapT<S>& p, const std::string& prefix) {
    return add(matmul(x, p.at(prefix + ".weight")), p.at(prefix + ".bias"));
}

template <typename S>
TensorT<S> group_norm_p(const TensorT<S>& x, int groups, const ParamMapT<S>& p,
                        const std::string& prefix) {
    const int c = static_cast<int>(x.dim(1));
    return group_norm(x, std::min(groups, c), p.at(prefix + ".gamma"), p.at(prefix + ".beta"));
}

// Multi-head self-attention over tokens [N, L, C].
template <typename S>
TensorT<S> attention(const TensorT<S>& tokens, int heads, const ParamMapT<S>& p,
                     const std::string& prefix) {
    const std::int64_t n = tokens.dim(0), l = tokens.dim(1), c = tokens.dim(2);
    const std::int64_t hd = c / heads;
    auto qkv = linear(tokens, p, prefix + ".qkv");
    auto split_heads = [&](const TensorT<S>& part) {
        return permute(reshape(part, {n, l, heads, hd}), {0, 2, 1, 3});  // [N,H,L,hd]
    };
    auto q = split_heads(slice_last(qkv, 0, c));
    auto k = split_heads(slice_last(qkv, c, c));
    auto v = split_heads(slice_last(qkv, 2 * c, c));
    auto scores = scale(matmul(q, transpose_last2(k)),
                        static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd))));
    auto weights = softmax(scores, -1);
    auto mixed = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {n, l, c});
    return linear(mixed, p, prefix + ".proj");
}

// y * (1 + scale) + shift with [N,hidden] modulation over [N,L,hidden] tokens.
template <typename S>
TensorT<S> modulate(const TensorT<S>& y, const TensorT<S>& shift, const TensorT<S>& scale_v) {
    const std::int64_t n = y.dim(0), h = y.dim(2);
    auto s3 = reshape(add_scalar(scale_v, S(1)), {n, 1, h});
    auto b3 = reshape(shift, {n, 1, h});
    return add(mul(y, s3), b3);
}

}  // namespace

// ---------------- patchify ----------------

template <typename S>
TensorT<S> patchify(const TensorT<S>& x, int p) {
    if (x.ndim() != 4) throw DimensionError("patchify expects [N,C,H,W]");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (p < 1 || h % p != 0 || w % p != 0) {
        throw DimensionError("patchify: dims " + shape_str(x.shape()) +
                             " not divisible by patch " + std::to_string(p));
    }
    const std::int64_t gh = h / p, gw = w / p;
    auto split = reshape(x, {n, c, gh, p, gw, p});
    auto moved = permute(split, {0, 2, 4, 1, 3, 5});  // [N,gh,gw,C,p,p]
    return reshape(moved, {n, gh * gw, c * p * p});
}

template <typename S>
TensorT<S> unpatchify(const TensorT<S>& tokens, int p, int channels, int side) {
    if (tokens.ndim() != 3) throw DimensionError("unpatchify expects [N,L,F]");
    const std::int64_t n = tokens.dim(0);
    const std::int64_t g = side / p;
    if (p < 1 || side % p != 0 || tokens.dim(1) != g * g ||
        tokens.dim(2) != static_cast<std::int64_t>(channels) * p * p) {
        throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) +
                             " incompatible with side " + std::to_string(side) + ", patch " +
                             std::to_string(p));
    }
    auto split = reshape(tokens, {n, g, g, channels, p, p});
    auto moved = permute(split, {0, 3, 1, 4, 2, 5});  // [N,C,gh,p,gw,p]
    return reshape(moved, {n, channels, static_cast<std::int64_t>(side),
                           static_cast<std::int64_t>(side)});
}

// ---------------- DiT forward ----------------

template <typename S>
TensorT<S> dit_forward(const DiTModelT<S>& model, const TensorT<S>& x_t, std::span<const int> t,
                       const TensorT<S>& v) {
    const auto& cfg = model.cfg;
    const auto& p = model.p;
    if (x_t.ndim() != 4 || x_t.dim(1) != cfg.in_channels || x_t.dim(2) != cfg.input_size ||
        x_t.dim(3) != cfg.input_size) {
        throw DimensionError("dit_forward: input " + shape_str(x_t.shape()) +
                             " does not match config " + std::to_string(cfg.input_size));
    }
    if (v.ndim() != 2 || v.dim(1) != cfg.cond_dim) {
        throw DimensionError("dit_forward: conditioning width " + shape_str(v.shape()) +
                             " != d " + std::to_string(cfg.cond_dim));
    }
    if (x_t.dim(0) != static_cast<std::int64_t>(t.size()) || v.dim(0) != x_t.dim(0)) {
        throw DimensionError("dit_forward: batch size mismatch");
    }

    auto tokens = patchify(x_t, cfg.patch);
    auto h = add(linear(tokens, p, "x_embed"), model.pos_embed);

    auto temb = timestep_embedding<S>(t, cfg.t_embed_dim);
    auto tcond = linear(silu(linear(temb, p, "t_mlp.fc1")), p, "t_mlp.fc2");
    // Row-normalizing v keeps the per-image conditioning signal at unit
    // scale; the raw pooled-linear encoder output is small enough at init
    // that an unnormalized projection gets drowned out by the timestep term
    // and the conditioning pathway never takes off.
    auto c = add(tcond, linear(normalize_rows(v, S(1e-5)), p, "v_proj"));  // [N, hidden]
    auto c_act = silu(c);

    const std::int64_t n = x_t.dim(0);
    const std::int64_t hid = cfg.hidden;
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string bp = "blocks." + std::to_string(i);
        auto mod = linear(c_act, p, bp + ".adaln");  // [N, 6*hidden]
        auto shift_a = slice_last(mod, 0, hid);
        auto scale_a = slice_last(mod, hid, hid);
        auto gate_a = reshape(slice_last(mod, 2 * hid, hid), {n, 1, hid});
        auto shift_m = slice_last(mod, 3 * hid, hid);
        auto scale_m = slice_last(mod, 4 * hid, hid);
        auto gate_m = reshape(slice_last(mod, 5 * hid, hid), {n, 1, hid});

        auto attn_in = modulate(normalize_rows(h, S(1e-5)), shift_a, scale_a);
        h = add(h, mul(gate_a, attention(attn_in, cfg.heads, p, bp + ".attn")));

        auto mlp_in = modulate(normalize_rows(h, S(1e-5)), shift_m, scale_m);
        auto mlp_out = linear(gelu(linear(mlp_in, p, bp + ".mlp.fc1")), p, bp + ".mlp.fc2");
        h = add(h, mul(gate_m, mlp_out));
    }

    auto fmod = linear(c_act, p, "final.adaln");  // [N, 2*hidden]
    auto shift_f = slice_last(fmod, 0, hid);
    auto scale_f = slice_last(fmod, hid, hid);
    auto out_tokens =
        linear(modulate(normalize_rows(h, S(1e-5)), shift_f, scale_f), p, "final.proj");
    return unpatchify(out_tokens, cfg.patch, cfg.in_channels, cfg.input_size);
}

// ---------------- encoder forward ----------------

template <typename S>
TensorT<S> encoder_forward(const EncoderModelT<S>& model, const TensorT<S>& x0,
                           std::span<const int> t) {
    const auto& cfg = model.cfg;
    const auto& p = model.p;
    if (x0.ndim() != 4 || x0.dim(1) != cfg.in_channels || x0.dim(2) != cfg.input_size ||
        x0.dim(3) != cfg.input_size) {
        throw DimensionError("encoder_forward: input " + shape_str(x0.shape()) +
                             " does not match config " + std::to_string(cfg.input_size));
    }
    if (x0.dim(0) != static_cast<std::int64_t>(t.size())) {
        throw DimensionError("encoder_forward: batch size mismatch");
    }
    const std::int64_t n = x0.dim(0);

    auto temb0 = timestep_embedding<S>(t, cfg.t_embed_dim());
    auto temb = linear(silu(linear(temb0, p, "t_mlp.fc1")), p, "t_mlp.fc2");
    auto temb_act = silu(temb);

    auto h = conv2d(x0, p.at("stem.weight"), p.at("stem.bias"), 1, 1);
    int side = cfg.input_size;
    for (int s = 0; s < cfg.stages(); ++s) {
        const std::string sp = "stages." + std::to_string(s);
        const std::int64_t c_out = cfg.base * cfg.channel_multipliers[static_cast<std::size_t>(s)];
        const bool with_attn =
            std::find(cfg.attention_resolutions.begin(), cfg.attention_resolutions.end(), side) !=
            cfg.attention_resolutions.end();
        for (int u = 0; u < cfg.blocks; ++u) {
            const std::string up = sp + ".units." + std::to_string(u);
            auto h1 = conv2d(silu(group_norm_p(h, cfg.norm_groups, p, up + ".norm1")),
                             p.at(up + ".conv1.weight"), p.at(up + ".conv1.bias"), 1, 1);
            auto tadd = reshape(linear(temb_act, p, up + ".temb"), {n, c_out, 1, 1});
            h1 = add(h1, tadd);
            auto h2 = conv2d(silu(group_norm_p(h1, cfg.norm_groups, p, up + ".norm2")),
                             p.at(up + ".conv2.weight"), p.at(up + ".conv2.bias"), 1, 1);
            auto skip = h.dim(1) == c_out
                            ? h
                            : conv2d(h, p.at(up + ".skip.weight"), p.at(up + ".skip.bias"), 1, 0);
            h = add(h2, skip);
            if (with_attn) {
                const std::string ap = up + ".attn";
                auto hn = group_norm_p(h, cfg.norm_groups, p, ap + ".norm");
                auto tok = permute(reshape(hn, {n, c_out, static_cast<std::int64_t>(side) * side}),
                                   {0, 2, 1});
                auto out = attention(tok, cfg.heads, p, ap);
                auto spatial = reshape(permute(out, {0, 2, 1}),
                                       {n, c_out, static_cast<std::int64_t>(side),
                                        static_cast<std::int64_t>(side)});
                h = add(h, spatial);
            }
        }
        if (s + 1 < cfg.stages()) {
            h = conv2d(h, p.at(sp + ".down.weight"), p.at(sp + ".down.bias"), 2, 1);
            side /= 2;
        }
    }

    auto pooled = mean_tail(silu(group_norm_p(h, cfg.norm_groups, p, "head.norm")), 2);
    return linear(pooled, p, "head.fc");
}

// ---------------- init ----------------

namespace {

float trunc_normal(Rng& rng, float std_dev) {
    float z = rng.normal();
    while (std::abs(z) > 2.0f) z = rng.normal();
    return z * std_dev;
}

Tensor init_weight(Shape shape, Rng& rng, float std_dev = 0.02f) {
    Tensor t(std::move(shape));
    for (auto& v : t.mut()) v = trunc_normal(rng, std_dev);
    return t;
}

void add_linear(ParamMapT<float>& p, const std::string& prefix, std::int64_t in,
                std::int64_t out, Rng& rng, bool zero = false) {
    p.add(prefix + ".weight", zero ? Tensor::zeros({in, out}) : init_weight({in, out}, rng));
    p.add(prefix + ".bias", Tensor::zeros({out}));
}

void add_conv(ParamMapT<float>& p, const std::string& prefix, std::int64_t out, std::int64_t in,
              int k, Rng& rng) {
    p.add(prefix + ".weight", init_weight({out, in, k, k}, rng));
    p.add(prefix + ".bias", Tensor::zeros({out}));
}

void add_norm(ParamMapT<float>& p, const std::string& prefix, std::int64_t c) {
    p.add(prefix + ".gamma", Tensor::full({c}, 1.0f));
    p.add(prefix + ".beta", Tensor::zeros({c}));
}

void add_attention(ParamMapT<float>& p, const std::string& prefix, std::int64_t c, Rng& rng) {
    add_linear(p, prefix + ".qkv", c, 3 * c, rng);
    add_linear(p, prefix + ".proj", c, c, rng);
}

}  // namespace

DiTModel init_dit(const DiTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DiTModel m;
    m.cfg = cfg;
    Rng rng = Rng::derive(seed, "dit-init");
    auto& p = m.p;
    const std::int64_t hid = cfg.hidden;
    const std::int64_t pf = static_cast<std::int64_t>(cfg.patch) * cfg.patch * cfg.in_channels;

    add_linear(p, "x_embed", pf, hid, rng);
    add_linear(p, "t_mlp.fc1", cfg.t_embed_dim, hid, rng);
    add_linear(p, "t_mlp.fc2", hid, hid, rng);
    add_linear(p, "v_proj", cfg.cond_dim, hid, rng);
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string bp = "blocks." + std::to_string(i);
        add_attention(p, bp + ".attn", hid, rng);
        add_linear(p, bp + ".mlp.fc1", hid, hid * cfg.mlp_ratio, rng);
        add_linear(p, bp + ".mlp.fc2", hid * cfg.mlp_ratio, hid, rng);
        add_linear(p, bp + ".adaln", hid, 6 * hid, rng, /*zero=*/true);
    }
    add_linear(p, "final.adaln", hid, 2 * hid, rng, /*zero=*/true);
    add_linear(p, "final.proj", hid, pf, rng, /*zero=*/true);

    m.pos_embed = sincos_pos_embed_2d<float>(cfg.hidden, cfg.grid_side());
    return m;
}

EncoderModel init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderModel m;
    m.cfg = cfg;
    Rng rng = Rng::derive(seed, "encoder-init");
    auto& p = m.p;
    const std::int64_t tdim = cfg.t_embed_dim();

    add_conv(p, "stem", cfg.base, cfg.in_channels, 3, rng);
    add_linear(p, "t_mlp.fc1", tdim, tdim, rng);
    add_linear(p, "t_mlp.fc2", tdim, tdim, rng);

    std::int64_t c_in = cfg.base;
    int side = cfg.input_size;
    for (int s = 0; s < cfg.stages(); ++s) {
        const std::string sp = "stages." + std::to_string(s);
        const std::int64_t c_out = cfg.base * cfg.channel_multipliers[static_cast<std::size_t>(s)];
        const bool with_attn =
            std::find(cfg.attention_resolutions.begin(), cfg.attention_resolutions.end(), side) !=
            cfg.attention_resolutions.end();
        for (int u = 0; u < cfg.blocks; ++u) {
            const std::string up = sp + ".units." + std::to_string(u);
            add_norm(p, up + ".norm1", c_in);
            add_conv(p, up + ".conv1", c_out, c_in, 3, rng);
            add_linear(p, up + ".temb", tdim, c_out, rng);
            add_norm(p, up + ".norm2", c_out);
            add_conv(p, up + ".conv2", c_out, c_out, 3, rng);
            if (c_in != c_out) {
                add_conv(p, up + ".skip", c_out, c_in, 1, rng);
            }
            if (with_attn) {
                add_norm(p, up + ".attn.norm", c_out);
                add_attention(p, up + ".attn", c_out, rng);
            }
            c_in = c_out;
        }
        if (s + 1 < cfg.stages()) {
            add_conv(p, sp + ".down", c_out, c_out, 3, rng);
            side /= 2;
        }
    }
    add_norm(p, "head.norm", c_in);
    add_linear(p, "head.fc", c_in, cfg.embed_dim, rng);
    return m;
}

EncoderModelT<double> to_f64(const EncoderModel& m) {
    EncoderModelT<double> out;
    out.cfg = m.cfg;
    for (const auto& [name, t] : m.p.params) {
        out.p.params.emplace(name, t.cast<double>());
    }
    return out;
}

DiTModelT<double> to_f64(const DiTModel& m) {
    DiTModelT<double> out;
    out.cfg = m.cfg;
    for (const auto& [name, t] : m.p.params) {
        out.p.params.emplace(name, t.cast<double>());
    }
    out.pos_embed = m.pos_embed.cast<double>();
    return out;
}

// ---------------- presets ----------------

DiTConfig dit_tiny(int input_size, int in_channels) {
    DiTConfig c;
    c.input_size = input_size;
    c.in_channels = in_channels;
    c.patch = 2;
    c.hidden = 192;
    c.depth = 12;
    c.heads = 3;
    return c;
}

DiTConfig dit_small(int input_size, int in_channels) {
    DiTConfig c;
    c.input_size = input_size;
    c.in_channels = in_channels;
    c.patch = 4;
    c.hidden = 384;
    c.depth = 12;
    c.heads = 6;
    return c;
}

DiTConfig dit_base(int input_size, int in_channels) {
    DiTConfig c;
    c.input_size = input_size;
    c.in_channels = in_channels;
    c.patch = 8;
    c.hidden = 768;
    c.depth = 16;
    c.heads = 12;
    return c;
}

DiTConfig dit_nano(int in_channels) {
    DiTConfig c;
    c.input_size = 16;
    c.in_channels = in_channels;
    c.patch = 4;
    c.hidden = 64;
    c.depth = 4;
    c.heads = 2;
    c.cond_dim = 128;
    c.t_embed_dim = 64;
    return c;
}

EncoderConfig encoder_small_images(int input_size, int in_channels) {
    EncoderConfig c;
    c.input_size = input_size;
    c.in_channels = in_channels;
    return c;
}

EncoderConfig encoder_large_images(int input_size, int in_channels) {
    EncoderConfig c;
    c.input_size = input_size;
    c.in_channels = in_channels;
    c.base = 256;
    c.channel_multipliers = {1, 1, 2, 2, 3, 4};
    return c;
}

EncoderConfig encoder_nano(int in_channels) {
    EncoderConfig c;
    c.input_size = 16;
    c.in_channels = in_channels;
    c.base = 32;
    c.blocks = 1;
    c.attention_resolutions = {8};
    c.heads = 2;
    c.channel_multipliers = {1, 2};
    c.embed_dim = 128;
    return c;
}

// ---------------- explicit instantiations ----------------

#define DIER_INSTANTIATE_NETS(S)                                                            \
    template TensorT<S> timestep_embedding<S>(std::span<const int>, int);                   \
    template TensorT<S> sincos_pos_embed_2d<S>(int, int);                                   \
    template TensorT<S> patchify<S>(const TensorT<S>&, int);                                \
    template TensorT<S> unpatchify<S>(const TensorT<S>&, int, int, int);                    \
    template TensorT<S> encoder_forward<S>(const EncoderModelT<S>&, const TensorT<S>&,      \
                                           std::span<const int>);                           \
    template TensorT<S> dit_forward<S>(const DiTModelT<S>&, const TensorT<S>&,              \
                                       std::span<const int>, const TensorT<S>&);

DIER_INSTANTIATE_NETS(float)
DIER_INSTANTIATE_NETS(double)

#undef DIER_INSTANTIATE_NETS

}  // namespace dier
