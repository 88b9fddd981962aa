#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dier/checkpoint.hpp"
#include "dier/grad_check.hpp"
#include "dier/run_config.hpp"
#include "dier/training.hpp"
#include "testing_util.hpp"

using namespace dier;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("training");

namespace {

std::string scratch_dir(const std::string& leaf) {
    auto p = fs::temp_directory_path() / "dier-tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

RunConfig micro_run_config() {
    RunConfig cfg;
    cfg.dit = testing::dit_micro();
    cfg.encoder = testing::encoder_micro();
    cfg.model_preset = "micro";
    cfg.train.batch_size = 8;
    cfg.train.timesteps = 50;
    cfg.train.log_every = 1;
    cfg.train.epochs = 1;
    return cfg;
}

PixelDataset micro_data(std::uint64_t seed, int per_class = 16) {
    auto set = synth_shapes(per_class, 4, 8, seed);
    return preprocess(set, 8, true, seed);
}

}  // namespace

TEST_CASE("adam single-step oracle: f(w)=w^2 from w=1") {
    Tensor w({1}, {1.0f});
    w.set_requires_grad(true);
    std::vector<NamedParam> params{{"w", &w}};
    OptimizerState state;
    Tape tape;
    auto loss = sum(mul(w, w));
    tape.backward(loss);
    adam_step(
        params, [&](const NamedParam& np) { return tape.grad(*np.tensor); }, state, 0.1f);
    // Hand-computed: 1 - 0.1 * mhat / (sqrt(vhat) + 1e-8) = 0.9000000005
    CHECK(std::abs(w.data()[0] - 0.9000000005) < 1e-6);
    CHECK(state.step == 1);
}

TEST_CASE("adam fixed point under zero gradients") {
    Tensor w({3}, {0.5f, -1.0f, 2.0f});
    w.set_requires_grad(true);
    std::vector<NamedParam> params{{"w", &w}};
    OptimizerState state;
    adam_step(
        params, [](const NamedParam&) { return std::span<const float>(); }, state, 0.1f);
    CHECK(w.data()[0] == 0.5f);
    CHECK(w.data()[1] == -1.0f);
    CHECK(w.data()[2] == 2.0f);
}

TEST_CASE("adamw decoupled decay with zero gradient") {
    Tensor w({1}, {1.0f});
    w.set_requires_grad(true);
    std::vector<NamedParam> params{{"w", &w}};
    OptimizerState state;
    state.hp.weight_decay = 0.05f;
    state.hp.decoupled = true;
    adam_step(
        params, [](const NamedParam&) { return std::span<const float>(); }, state, 0.1f);
    CHECK(w.data()[0] == doctest::Approx(0.995f).epsilon(1e-7));
}

TEST_CASE("lr schedule: apex, terminus, midpoint") {
    CHECK(lr_schedule(10, 100, 10, 2.0f) == doctest::Approx(2.0f));
    CHECK(lr_schedule(100, 100, 10, 2.0f) == 0.0f);
    CHECK(lr_schedule(55, 100, 10, 2.0f) == doctest::Approx(1.0f));
    CHECK(lr_schedule(0, 100, 10, 2.0f) == 0.0f);
    CHECK(lr_schedule(5, 100, 10, 2.0f) == doctest::Approx(1.0f));
}

TEST_CASE("zero-output model sits at the unit-variance loss baseline") {
    auto enc = init_encoder(encoder_nano(), 3);
    auto dit = init_dit(dit_nano(), 3);
    auto sched = make_linear_schedule(1000, 1e-4f, 0.02f);
    Rng rng(4);
    Tensor x0 = randn({64, 1, 16, 16}, rng);
    for (auto& v : x0.mut()) v = std::tanh(v);
    Rng loss_rng(5);
    auto draw = diffusion_loss(enc, dit, x0, sched, loss_rng);
    CHECK(draw.loss.item() > 0.9f);
    CHECK(draw.loss.item() < 1.1f);
    CHECK(draw.t.size() == 64);
}

TEST_CASE("perfect prediction drives the squared loss to zero") {
    Rng rng(6);
    Tensor eps = randn({4, 1, 3, 3}, rng);
    auto diff = sub(eps, eps);
    CHECK(mean(mul(diff, diff)).item() == 0.0f);
}

TEST_CASE("five-parameter toy predictor gradients match finite differences") {
    // eps_hat = w0 * x_t + w1, loss as in the pre-training objective.
    Rng rng(7);
    auto x0 = randn({2, 1, 3, 3}, rng).cast<double>();
    auto eps = randn({2, 1, 3, 3}, rng).cast<double>();
    Tensor64 x_t(x0.shape());
    {
        auto xv = x0.data();
        auto ev = eps.data();
        auto ov = x_t.mut();
        for (std::int64_t i = 0; i < x_t.numel(); ++i) {
            ov[i] = std::sqrt(0.36) * xv[i] + std::sqrt(0.64) * ev[i];
        }
    }
    Tensor64 w({5}, {0.3, -0.2, 0.05, 0.7, 0.1});
    auto loss_fn = [&](const Tensor64& p) {
        auto s0 = slice_last(p, 0, 1);
        auto s1 = slice_last(p, 1, 1);
        auto s2 = slice_last(p, 2, 1);
        auto scale_term = add(mul(x_t, reshape(s0, {1, 1, 1, 1})),
                              mul(mul(x_t, x_t), reshape(s2, {1, 1, 1, 1})));
        auto eps_hat = add(scale_term, reshape(s1, {1, 1, 1, 1}));
        eps_hat = add(eps_hat, mul(reshape(slice_last(p, 3, 1), {1, 1, 1, 1}),
                                   dier::sin(x_t)));
        eps_hat = add(eps_hat, mul(reshape(slice_last(p, 4, 1), {1, 1, 1, 1}),
                                   silu(x_t)));
        auto d = sub(eps, eps_hat);
        return mean(mul(d, d));
    };
    auto res = grad_check(loss_fn, w);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("fit is deterministic, trains both nets, and validates config") {
    auto cfg = micro_run_config();
    cfg.train.max_steps = 6;
    auto data = micro_data(100);
    auto sched = make_linear_schedule(cfg.train.timesteps, cfg.beta_start, cfg.beta_end);

    auto run_once = [&]() {
        auto enc = init_encoder(cfg.encoder, cfg.train.seed);
        auto dit = init_dit(cfg.dit, cfg.train.seed);
        FitOptions opts;
        return fit(enc, dit, data, sched, cfg.train, opts);
    };
    auto r1 = run_once();
    auto r2 = run_once();
    REQUIRE(r1.trace.size() == r2.trace.size());
    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        CHECK(r1.trace[i].loss == r2.trace[i].loss);
        CHECK(r1.trace[i].lr == r2.trace[i].lr);
        CHECK(r1.trace[i].step == r2.trace[i].step);
    }

    // invalid epochs rejected
    auto bad = cfg;
    bad.train.epochs = 0;
    bad.train.max_steps = 0;
    auto enc = init_encoder(cfg.encoder, 0);
    auto dit = init_dit(cfg.dit, 0);
    FitOptions opts;
    CHECK_THROWS_AS(fit(enc, dit, data, sched, bad.train, opts), ConfigError);
}

TEST_CASE("joint optimization moves both parameter sets and feeds the encoder") {
    auto cfg = micro_run_config();
    cfg.train.max_steps = 10;
    auto data = micro_data(101);
    auto sched = make_linear_schedule(cfg.train.timesteps, cfg.beta_start, cfg.beta_end);
    auto enc = init_encoder(cfg.encoder, 9);
    auto dit = init_dit(cfg.dit, 9);
    auto enc0 = enc;
    auto dit0 = dit;
    FitOptions opts;
    auto report = fit(enc, dit, data, sched, cfg.train, opts);
    CHECK(report.steps_run == 10);

    auto l2_delta = [](const auto& a, const auto& b) {
        double acc = 0;
        for (const auto& [name, t] : a.p.params) {
            const auto& u = b.p.at(name);
            for (std::int64_t i = 0; i < t.numel(); ++i) {
                const double d = double(t.data()[i]) - u.data()[i];
                acc += d * d;
            }
        }
        return std::sqrt(acc);
    };
    CHECK(l2_delta(enc, enc0) > 0.0);
    CHECK(l2_delta(dit, dit0) > 0.0);

    // Conditioning liveness: encoder gradient norm is nonzero on a fresh draw.
    Rng rng(55);
    std::vector<std::int64_t> idx{0, 1, 2, 3};
    Tensor x0 = assemble_batch(data, idx, {});
    Tape tape;
    Rng loss_rng(56);
    auto draw = diffusion_loss(enc, dit, x0, sched, loss_rng);
    tape.backward(draw.loss);
    double enc_norm = 0;
    for (auto& [name, t] : enc.p.params) {
        for (float g : tape.grad(t)) enc_norm += double(g) * g;
    }
    CHECK(enc_norm > 0.0);
}

TEST_CASE("checkpoint-resume equals an uninterrupted run") {
    auto cfg = micro_run_config();
    cfg.train.max_steps = 12;
    cfg.train.checkpoint_every = 6;
    cfg.train.log_every = 1;
    auto data = micro_data(102);
    auto sched = make_linear_schedule(cfg.train.timesteps, cfg.beta_start, cfg.beta_end);
    RunConfig rc = cfg;
    const std::string cfg_text = serialize_run_config(rc);

    const std::string dir_a = scratch_dir("resume-a");
    auto enc_a = init_encoder(cfg.encoder, 5);
    auto dit_a = init_dit(cfg.dit, 5);
    FitOptions opts_a;
    opts_a.run_dir = dir_a;
    opts_a.config_text = cfg_text;
    auto straight = fit(enc_a, dit_a, data, sched, cfg.train, opts_a);

    const std::string dir_b = scratch_dir("resume-b");
    auto cfg_half = cfg;
    cfg_half.train.max_steps = 6;
    auto enc_b = init_encoder(cfg.encoder, 5);
    auto dit_b = init_dit(cfg.dit, 5);
    FitOptions opts_b;
    opts_b.run_dir = dir_b;
    opts_b.config_text = cfg_text;
    auto first_half = fit(enc_b, dit_b, data, sched, cfg_half.train, opts_b);

    auto enc_c = init_encoder(cfg.encoder, 999);  // overwritten by resume
    auto dit_c = init_dit(cfg.dit, 999);
    FitOptions opts_c;
    opts_c.run_dir = scratch_dir("resume-c");
    opts_c.config_text = cfg_text;
    opts_c.resume_from = (fs::path(dir_b) / "ckpt_final.dier").string();
    auto second_half = fit(enc_c, dit_c, data, sched, cfg.train, opts_c);

    std::vector<float> merged;
    for (auto& row : first_half.trace) merged.push_back(row.loss);
    for (auto& row : second_half.trace) merged.push_back(row.loss);
    REQUIRE(merged.size() == straight.trace.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
        CHECK(merged[i] == straight.trace[i].loss);
    }

    // Parameters after resume match the uninterrupted run bit-for-bit.
    for (const auto& [name, t] : enc_a.p.params) {
        const auto& u = enc_c.p.at(name);
        for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == u.data()[i]);
    }
}

TEST_CASE("loss trace file uses the step,loss,lr,wall_ms layout") {
    auto cfg = micro_run_config();
    cfg.train.max_steps = 3;
    auto data = micro_data(103);
    auto sched = make_linear_schedule(cfg.train.timesteps, cfg.beta_start, cfg.beta_end);
    auto enc = init_encoder(cfg.encoder, 1);
    auto dit = init_dit(cfg.dit, 1);
    const std::string dir = scratch_dir("trace");
    FitOptions opts;
    opts.run_dir = dir;
    RunConfig rc = cfg;
    opts.config_text = serialize_run_config(rc);
    fit(enc, dit, data, sched, cfg.train, opts);
    std::ifstream in(fs::path(dir) / "loss.csv");
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,loss,lr,wall_ms");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);
}

TEST_SUITE_END();
