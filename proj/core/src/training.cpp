#include "dier/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dier/checkpoint.hpp"
#include "dier/run_config.hpp"

namespace dier {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(learning_rate > 0.0f)) throw ConfigError("train.learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (timesteps < 1) throw ConfigError("train.timesteps must be >= 1");
    if (max_steps < 0 || checkpoint_every < 0 || log_every < 1) {
        throw ConfigError("train step intervals out of range");
    }
}

void adam_step(std::vector<NamedParam>& params,
               const std::function<std::span<const float>(const NamedParam&)>& grad_of,
               OptimizerState& state, float lr, float grad_scale) {
    ++state.step;
    const double b1 = state.hp.beta1;
    const double b2 = state.hp.beta2;
    const double eps = state.hp.eps;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const double wd = state.hp.weight_decay;

    for (auto& np : params) {
        Tensor& p = *np.tensor;
        auto mit = state.m.find(np.name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(np.name, Tensor(p.shape())).first;
            state.v.emplace(np.name, Tensor(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(np.name);
        if (m.shape() != p.shape()) {
            throw DimensionError("optimizer moment shape mismatch for " + np.name);
        }
        auto g = grad_of(np);
        if (!g.empty() && static_cast<std::int64_t>(g.size()) != p.numel()) {
            throw DimensionError("gradient size mismatch for " + np.name);
        }

        Tensor updated(p.shape());
        auto pv = p.data();
        auto uv = updated.mut();
        auto mv = m.mut();
        auto vv = v.mut();
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            double gi = g.empty() ? 0.0 : static_cast<double>(g[static_cast<std::size_t>(i)]) *
                                              grad_scale;
            if (!state.hp.decoupled && wd != 0.0) gi += wd * pv[i];
            const double mi = b1 * mv[i] + (1.0 - b1) * gi;
            const double vi = b2 * vv[i] + (1.0 - b2) * gi * gi;
            mv[i] = static_cast<float>(mi);
            vv[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double next = pv[i] - lr * mhat / (std::sqrt(vhat) + eps);
            if (state.hp.decoupled && wd != 0.0) next -= lr * wd * pv[i];
            uv[i] = static_cast<float>(next);
        }
        updated.set_requires_grad(true);
        p = std::move(updated);
    }
}

float lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                  float max_lr) {
    if (total_steps <= 0) throw ConfigError("lr_schedule needs total_steps > 0");
    if (step < 0) step = 0;
    if (warmup_steps > 0 && step < warmup_steps) {
        return max_lr * static_cast<float>(step) / static_cast<float>(warmup_steps);
    }
    if (step >= total_steps) return 0.0f;
    if (total_steps == warmup_steps) return max_lr;
    return max_lr * static_cast<float>(total_steps - step) /
           static_cast<float>(total_steps - warmup_steps);
}

LossDraw diffusion_loss(const EncoderModel& enc, const DiTModel& dit, const Tensor& x0,
                        const NoiseSchedule& sched, Rng& rng) {
    const std::int64_t n = x0.dim(0);
    LossDraw draw;
    draw.t.resize(static_cast<std::size_t>(n));
    for (auto& t : draw.t) t = static_cast<int>(rng.uniform_int(sched.timesteps));
    Tensor eps(x0.shape());
    rng.fill_normal(eps.mut());
    Tensor x_t = q_sample_batch(x0, draw.t, eps, sched);
    Tensor v = encoder_forward(enc, x0, draw.t);
    Tensor eps_hat = dit_forward(dit, x_t, draw.t, v);
    Tensor diff = sub(eps, eps_hat);
    draw.loss = mean(mul(diff, diff));
    if (!std::isfinite(draw.loss.item())) {
        std::ostringstream os;
        os << "diffusion loss is not finite (" << draw.loss.item() << "); t draws:";
        for (int t : draw.t) os << ' ' << t;
        throw NumericError(os.str());
    }
    return draw;
}

std::vector<NamedParam> collect_params(EncoderModel& enc, DiTModel& dit) {
    std::vector<NamedParam> params;
    for (auto& [name, t] : enc.p.params) params.push_back({"enc." + name, &t});
    for (auto& [name, t] : dit.p.params) params.push_back({"dit." + name, &t});
    return params;
}

namespace {

double global_grad_norm(const Tape& tape, const std::vector<NamedParam>& params) {
    double acc = 0.0;
    for (const auto& np : params) {
        auto g = tape.grad(*np.tensor);
        for (float v : g) acc += static_cast<double>(v) * v;
    }
    return std::sqrt(acc);
}

}  // namespace

TrainingReport fit(EncoderModel& enc, DiTModel& dit, const PixelDataset& data,
                   const NoiseSchedule& sched, const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate();
    const std::int64_t n = data.count();
    if (n == 0) throw DataError("fit: dataset is empty");
    if (cfg.batch_size > n) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                          " exceeds dataset size " + std::to_string(n));
    }
    const std::int64_t spe = n / cfg.batch_size;  // full batches only
    const std::int64_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : static_cast<std::int64_t>(cfg.epochs) * spe;

    OptimizerState opt;
    Rng rng = Rng::derive(cfg.seed, "train");
    std::int64_t start_step = 0;
    if (!opts.resume_from.empty()) {
        TrainState st = load_train_state(opts.resume_from);
        enc = std::move(st.encoder);
        dit = std::move(st.dit);
        opt = std::move(st.opt);
        rng.set_state(st.rng_key, st.rng_counter);
        start_step = static_cast<std::int64_t>(st.step);
    }

    auto params = collect_params(enc, dit);

    namespace fs = std::filesystem;
    std::ofstream trace_file;
    if (!opts.run_dir.empty()) {
        fs::create_directories(opts.run_dir);
        const auto trace_path = fs::path(opts.run_dir) / "loss.csv";
        trace_file.open(trace_path, start_step > 0 ? std::ios::app : std::ios::trunc);
        if (!trace_file) throw IoError("cannot write " + trace_path.string());
        if (start_step == 0) trace_file << "step,loss,lr,wall_ms\n";
    }

    auto save_state = [&](std::int64_t step, const std::string& filename) {
        TrainState st;
        st.encoder = enc;
        st.dit = dit;
        st.opt = opt;
        st.sched = sched;
        st.train_cfg = cfg;
        st.rng_key = rng.key();
        st.rng_counter = rng.counter();
        st.step = static_cast<std::uint64_t>(step);
        st.config_text = opts.config_text;
        const std::string path = (fs::path(opts.run_dir) / filename).string();
        save_train_state(path, st);
        return path;
    };

    TrainingReport report;
    double smoothed = 0.0;
    bool smoothed_init = false;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::int64_t> order;
    std::vector<std::uint8_t> flips;
    std::int64_t order_epoch = -1;

    for (std::int64_t step = start_step; step < total_steps; ++step) {
        const std::int64_t epoch = step / spe;
        const std::int64_t batch_index = step % spe;
        if (epoch != order_epoch) {
            order = epoch_order(data, epoch);
            flips = epoch_flips(data, epoch);
            order_epoch = epoch;
        }
        std::span<const std::int64_t> idx(order.data() + batch_index * cfg.batch_size,
                                          static_cast<std::size_t>(cfg.batch_size));
        Tensor x0 = assemble_batch(data, idx, flips);

        Tape tape;
        LossDraw draw = diffusion_loss(enc, dit, x0, sched, rng);
        tape.backward(draw.loss);

        float grad_scale = 1.0f;
        if (cfg.grad_clip > 0.0f) {
            const double norm = global_grad_norm(tape, params);
            if (norm > cfg.grad_clip) {
                grad_scale = static_cast<float>(cfg.grad_clip / norm);
            }
        }
        adam_step(
            params, [&](const NamedParam& np) { return tape.grad(*np.tensor); }, opt,
            cfg.learning_rate, grad_scale);

        const float loss = draw.loss.item();
        if (!smoothed_init) {
            smoothed = loss;
            smoothed_init = true;
            report.initial_smoothed = loss;
        } else {
            smoothed = cfg.loss_ema * smoothed + (1.0 - cfg.loss_ema) * loss;
        }

        const std::int64_t done = step + 1;
        if (done % cfg.log_every == 0 || done == total_steps) {
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            TraceRow row{done, loss, cfg.learning_rate, wall_ms};
            report.trace.push_back(row);
            if (trace_file) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.3f\n",
                              static_cast<long long>(row.step), row.loss, row.lr, row.wall_ms);
                trace_file << buf;
                trace_file.flush();
            }
        }
        if (!opts.run_dir.empty() && cfg.checkpoint_every > 0 &&
            done % cfg.checkpoint_every == 0 && done != total_steps) {
            report.checkpoint_paths.push_back(
                save_state(done, "ckpt_step" + std::to_string(done) + ".dier"));
        }
    }

    if (!opts.run_dir.empty()) {
        report.checkpoint_paths.push_back(save_state(total_steps, "ckpt_final.dier"));
    }
    report.final_smoothed = static_cast<float>(smoothed);
    report.steps_run = total_steps - start_step;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace dier
