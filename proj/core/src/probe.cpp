#include "dier/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "dier/image_io.hpp"
#include "dier/training.hpp"

namespace dier {

EmbeddingTable extract_embeddings(const EncoderModel& model, const PixelDataset& data, int t,
                                  int batch_size) {
    if (t < 0) throw IndexError("extract_embeddings: negative timestep");
    const std::int64_t n = data.count();
    const std::int64_t d = model.cfg.embed_dim;
    EmbeddingTable table;
    table.vectors = Tensor({n, d});
    table.labels = data.labels;
    table.class_count = data.class_count;
    table.timestep = t;
    table.split = data.name;
    auto dst = table.vectors.mut();
    std::vector<std::uint8_t> no_flips;
    for (std::int64_t begin = 0; begin < n; begin += batch_size) {
        const std::int64_t count = std::min<std::int64_t>(batch_size, n - begin);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
        Tensor x0 = assemble_batch(data, idx, no_flips);
        std::vector<int> ts(static_cast<std::size_t>(count), t);
        Tensor v = encoder_forward(model, x0, ts);
        std::copy(v.data().begin(), v.data().end(), dst.begin() + begin * d);
    }
    return table;
}

EmbeddingTable pixel_table(const PixelDataset& data, const std::string& split) {
    EmbeddingTable table;
    const std::int64_t n = data.count();
    table.vectors = reshape(data.images, {n, data.images.numel() / n});
    table.labels = data.labels;
    table.class_count = data.class_count;
    table.timestep = 0;
    table.split = split;
    table.source = "raw-pixels";
    return table;
}

float topk_accuracy(const Tensor& logits, std::span<const int> labels, int k) {
    if (logits.ndim() != 2) {
        throw DimensionError("topk_accuracy expects [N,C] logits");
    }
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    if (k < 1 || k > c) {
        throw UsageError("topk_accuracy: k = " + std::to_string(k) + " out of range [1," +
                         std::to_string(c) + "]");
    }
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw DimensionError("topk_accuracy label count mismatch");
    }
    std::int64_t hits = 0;
    auto lv = logits.data();
    for (std::int64_t r = 0; r < n; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c) throw IndexError("label out of range");
        const float* row = lv.data() + r * c;
        const float ly = row[y];
        std::int64_t rank = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            if (row[j] > ly || (row[j] == ly && j < y)) ++rank;
        }
        if (rank < k) ++hits;
    }
    return 100.0f * static_cast<float>(hits) / static_cast<float>(n);
}

namespace {

struct Standardizer {
    std::vector<float> mu, inv_sigma;
};

Standardizer fit_standardizer(const Tensor& x) {
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Standardizer s;
    s.mu.assign(static_cast<std::size_t>(d), 0.0f);
    s.inv_sigma.assign(static_cast<std::size_t>(d), 1.0f);
    auto v = x.data();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    std::vector<double> sq(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t j = 0; j < d; ++j) {
            const double val = v[r * d + j];
            mean[static_cast<std::size_t>(j)] += val;
            sq[static_cast<std::size_t>(j)] += val * val;
        }
    }
    for (std::int64_t j = 0; j < d; ++j) {
        const double m = mean[static_cast<std::size_t>(j)] / n;
        const double var = std::max(sq[static_cast<std::size_t>(j)] / n - m * m, 0.0);
        s.mu[static_cast<std::size_t>(j)] = static_cast<float>(m);
        s.inv_sigma[static_cast<std::size_t>(j)] =
            static_cast<float>(1.0 / std::sqrt(var + 1e-12));
    }
    return s;
}

Tensor apply_standardizer(const Tensor& x, const Standardizer& s) {
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Tensor out(x.shape());
    auto xv = x.data();
    auto ov = out.mut();
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t j = 0; j < d; ++j) {
            ov[r * d + j] = (xv[r * d + j] - s.mu[static_cast<std::size_t>(j)]) *
                            s.inv_sigma[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows) {
    const std::int64_t d = x.dim(1);
    Tensor out({static_cast<std::int64_t>(rows.size()), d});
    auto xv = x.data();
    auto ov = out.mut();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(xv.begin() + rows[i] * d, xv.begin() + (rows[i] + 1) * d,
                  ov.begin() + static_cast<std::int64_t>(i) * d);
    }
    return out;
}

}  // namespace

ProbeResult train_linear_probe(const EmbeddingTable& train, const EmbeddingTable& eval,
                               const ProbeConfig& cfg) {
    if (train.vectors.ndim() != 2 || eval.vectors.ndim() != 2 ||
        train.vectors.dim(1) != eval.vectors.dim(1)) {
        throw DimensionError("probe tables must share embedding width");
    }
    if (train.timestep != eval.timestep) {
        throw UsageError("probe tables come from different timesteps (" +
                         std::to_string(train.timestep) + " vs " +
                         std::to_string(eval.timestep) + ")");
    }
    const int classes = std::max(train.class_count, eval.class_count);
    if (classes < 2) throw UsageError("probe needs at least 2 classes");
    const std::int64_t n = train.vectors.dim(0);
    const std::int64_t d = train.vectors.dim(1);
    if (cfg.peak_lr <= 0) throw ConfigError("probe peak_lr must be resolved before training");

    std::set<int> seen(train.labels.begin(), train.labels.end());
    for (int cls = 0; cls < classes; ++cls) {
        if (!seen.count(cls)) {
            std::fprintf(stderr, "[probe] warning: class %d absent from train labels\n", cls);
        }
    }

    Tensor x_train = train.vectors;
    Tensor x_eval = eval.vectors;
    if (cfg.standardize) {
        auto s = fit_standardizer(train.vectors);
        x_train = apply_standardizer(train.vectors, s);
        x_eval = apply_standardizer(eval.vectors, s);
    }

    Tensor weight = Tensor::zeros({d, classes});
    Tensor bias = Tensor::zeros({classes});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);

    OptimizerState opt;
    opt.hp.weight_decay = cfg.weight_decay;
    opt.hp.decoupled = true;

    const std::int64_t spe = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * spe;
    const std::int64_t warmup_steps = static_cast<std::int64_t>(cfg.warmup_epochs) * spe;

    std::vector<NamedParam> params{{"probe.weight", &weight}, {"probe.bias", &bias}};
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng rng = Rng::derive(cfg.seed, "probe-order", static_cast<std::uint64_t>(epoch) + 1);
        rng.shuffle(order);
        for (std::int64_t b = 0; b < spe; ++b, ++step) {
            const std::int64_t lo = b * cfg.batch_size;
            const std::int64_t hi = std::min<std::int64_t>(lo + cfg.batch_size, n);
            std::span<const std::int64_t> rows(order.data() + lo,
                                               static_cast<std::size_t>(hi - lo));
            Tensor xb = gather_rows(x_train, rows);
            std::vector<int> yb(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                yb[i] = train.labels[static_cast<std::size_t>(rows[i])];
            }
            const float lr = lr_schedule(step, total_steps, warmup_steps, cfg.peak_lr);
            Tape tape;
            Tensor logits = add(matmul(xb, weight), bias);
            Tensor loss = softmax_cross_entropy(logits, yb);
            tape.backward(loss);
            adam_step(
                params, [&](const NamedParam& np) { return tape.grad(*np.tensor); }, opt, lr);
        }
    }

    ProbeResult result;
    result.weight = weight;
    result.bias = bias;
    Tensor eval_logits = add(matmul(x_eval, weight), bias);
    result.top1 = topk_accuracy(eval_logits, eval.labels, 1);
    result.has_top5 = classes > 10;
    if (result.has_top5) {
        result.top5 = topk_accuracy(eval_logits, eval.labels, 5);
    }
    return result;
}

void finalize_sweep(SweepReport& report) {
    report.best_timestep = -1;
    report.best_top1 = 0.0f;
    for (std::size_t i = 0; i < report.timesteps.size(); ++i) {
        const float v = report.top1[i];
        if (std::isnan(v)) continue;
        if (report.best_timestep < 0 || v > report.best_top1) {
            report.best_top1 = v;
            report.best_timestep = report.timesteps[i];
        }
    }
}

SweepReport timestep_sweep(const EncoderModel& model, const PixelDataset& train,
                           const PixelDataset& test, std::span<const int> grid,
                           const ProbeConfig& cfg) {
    SweepReport report;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    for (int t : grid) {
        report.timesteps.push_back(t);
        try {
            EmbeddingTable train_table = extract_embeddings(model, train, t);
            EmbeddingTable test_table = extract_embeddings(model, test, t);
            ProbeResult res = train_linear_probe(train_table, test_table, cfg);
            report.top1.push_back(res.top1);
            report.top5.push_back(res.has_top5 ? res.top5 : nan);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "[sweep] t=%d failed: %s\n", t, e.what());
            report.top1.push_back(nan);
            report.top5.push_back(nan);
        }
    }
    finalize_sweep(report);
    return report;
}

std::vector<int> parse_timestep_grid(const std::string& spec, int timesteps) {
    int start = 0, end = 0, step = 0;
    if (std::sscanf(spec.c_str(), "%d:%d:%d", &start, &end, &step) != 3 || step < 1 ||
        start < 0 || end < start) {
        throw UsageError("bad timestep grid '" + spec + "', expected start:end:step");
    }
    if (end >= timesteps) {
        throw IndexError("grid end " + std::to_string(end) + " out of range [0," +
                         std::to_string(timesteps) + ")");
    }
    std::vector<int> grid;
    for (int t = start; t <= end; t += step) grid.push_back(t);
    if (end == 999 && step == 100 && grid.back() != 999) grid.push_back(999);
    return grid;
}

void write_sweep_csv(const SweepReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "t,top1,top5\n";
    for (std::size_t i = 0; i < report.timesteps.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%d,%.4f,%.4f\n", report.timesteps[i], report.top1[i],
                      report.top5[i]);
        out << buf;
    }
    if (!out) throw IoError("short write to " + path);
}

ReconstructReport reconstruct_report(const EncoderModel& enc, const DiTModel& dit,
                                     const PixelDataset& sample, const NoiseSchedule& sched,
                                     ReconMode mode, int steps, std::uint64_t seed,
                                     const Predictor* predictor_override) {
    ReconstructReport report;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(sample.count()));
    for (std::int64_t i = 0; i < sample.count(); ++i) idx[static_cast<std::size_t>(i)] = i;
    report.truth = assemble_batch(sample, idx, {});
    const std::int64_t n = report.truth.dim(0);

    // Zero-initialized output projection means the model was never trained.
    const auto& final_w = dit.p.at("final.proj.weight").data();
    report.untrained_warning =
        std::all_of(final_w.begin(), final_w.end(), [](float v) { return v == 0.0f; });

    Tensor truth = report.truth;
    Predictor self_conditioned = [&enc, &dit, truth](const Tensor& x, int t) {
        std::vector<int> ts(static_cast<std::size_t>(x.dim(0)), t);
        Tensor v = encoder_forward(enc, truth, ts);
        return dit_forward(dit, x, ts, v);
    };
    const Predictor& pred = predictor_override ? *predictor_override : self_conditioned;

    std::vector<int> grid = inversion_grid(sched.timesteps, steps);
    Tensor code;
    if (mode == ReconMode::Code) {
        code = stochastic_encode(truth, pred, grid, sched);
    } else {
        Rng rng = Rng::derive(seed, "recon-noise");
        code = randn(truth.shape(), rng);
    }
    std::vector<int> decode_grid(grid.rbegin(), grid.rend());
    Tensor recon = sample_from_noise(code, pred, decode_grid, sched, SampleMode::Ddim, nullptr);

    Tensor clipped(recon.shape());
    auto rv = recon.data();
    auto cv = clipped.mut();
    for (std::int64_t i = 0; i < recon.numel(); ++i) {
        cv[i] = std::clamp(rv[i], -1.0f, 1.0f);
    }
    report.reconstructions = clipped;

    const std::int64_t item = report.truth.numel() / n;
    auto cd = report.reconstructions.data();
    auto tv = report.truth.data();
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor a({item}, std::vector<float>(cd.begin() + i * item, cd.begin() + (i + 1) * item));
        Tensor b({item}, std::vector<float>(tv.begin() + i * item, tv.begin() + (i + 1) * item));
        report.psnr.push_back(psnr(a, b));
    }
    return report;
}

}  // namespace dier
