#include <doctest.h>

#include <cmath>

#include "dier/image_io.hpp"
#include "dier/probe.hpp"
#include "testing_util.hpp"

using namespace dier;

TEST_SUITE_BEGIN("probe-eval");

namespace {

EmbeddingTable blob_table(int per_class, int d, std::uint64_t seed, float spread,
                          const std::string& split) {
    EmbeddingTable table;
    table.class_count = 2;
    table.timestep = 0;
    table.split = split;
    Rng rng(seed);
    const int n = 2 * per_class;
    table.vectors = Tensor({n, d});
    auto v = table.vectors.mut();
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        table.labels.push_back(label);
        for (int j = 0; j < d; ++j) {
            const float mean = (label == 0 ? -3.0f : 3.0f) * (j % 2 == 0 ? 1.0f : -0.5f);
            v[i * d + j] = mean + spread * rng.normal();
        }
    }
    return table;
}

ProbeConfig quick_probe(std::uint64_t seed = 0) {
    ProbeConfig cfg;
    cfg.epochs = 40;
    cfg.warmup_epochs = 4;
    cfg.batch_size = 64;
    cfg.peak_lr = 2e-2f;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("linearly separable blobs reach 100% top-1") {
    auto train = blob_table(100, 8, 1, 0.3f, "train");
    auto eval = blob_table(50, 8, 2, 0.3f, "test");
    auto res = train_linear_probe(train, eval, quick_probe());
    CHECK(res.top1 == 100.0f);
    CHECK_FALSE(res.has_top5);
}

TEST_CASE("constant embeddings collapse to the majority class") {
    EmbeddingTable train, eval;
    train.class_count = eval.class_count = 2;
    train.timestep = eval.timestep = 0;
    const int n = 100;
    train.vectors = Tensor::full({n, 4}, 1.0f);
    eval.vectors = Tensor::full({n, 4}, 1.0f);
    for (int i = 0; i < n; ++i) {
        train.labels.push_back(i < 70 ? 0 : 1);
        eval.labels.push_back(i < 70 ? 0 : 1);
    }
    auto res = train_linear_probe(train, eval, quick_probe());
    CHECK(res.top1 == doctest::Approx(70.0f).epsilon(0.02));
}

TEST_CASE("probe is deterministic per seed") {
    auto train = blob_table(60, 6, 5, 2.5f, "train");
    auto eval = blob_table(40, 6, 6, 2.5f, "test");
    auto a = train_linear_probe(train, eval, quick_probe(3));
    auto b = train_linear_probe(train, eval, quick_probe(3));
    CHECK(a.top1 == b.top1);
    for (std::int64_t i = 0; i < a.weight.numel(); ++i) {
        CHECK(a.weight.data()[i] == b.weight.data()[i]);
    }
}

TEST_CASE("embedding scale does not move the blob probe") {
    auto train = blob_table(100, 8, 7, 0.5f, "train");
    auto eval = blob_table(50, 8, 8, 0.5f, "test");
    auto base = train_linear_probe(train, eval, quick_probe());

    auto scale_table = [](EmbeddingTable t, float k) {
        Tensor scaled(t.vectors.shape());
        auto src = t.vectors.data();
        auto dst = scaled.mut();
        for (std::int64_t i = 0; i < t.vectors.numel(); ++i) dst[i] = src[i] * k;
        t.vectors = scaled;
        return t;
    };
    auto res = train_linear_probe(scale_table(train, 17.0f), scale_table(eval, 17.0f),
                                  quick_probe());
    CHECK(std::abs(res.top1 - base.top1) < 1.0f);
}

TEST_CASE("topk accuracy semantics") {
    Tensor onehot({3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1});
    std::vector<int> labels{0, 1, 3};
    CHECK(topk_accuracy(onehot, labels, 1) == 100.0f);
    CHECK(topk_accuracy(onehot, labels, 4) == 100.0f);

    // Ties break toward the lower class index.
    Tensor tied({1, 3}, {0.5f, 0.5f, 0.1f});
    std::vector<int> l0{0}, l1{1};
    CHECK(topk_accuracy(tied, l0, 1) == 100.0f);
    CHECK(topk_accuracy(tied, l1, 1) == 0.0f);

    CHECK_THROWS_AS(topk_accuracy(onehot, labels, 5), UsageError);
    CHECK_THROWS_AS(topk_accuracy(onehot, labels, 0), UsageError);
}

TEST_CASE("random logits score ~10% top-1 over ten classes") {
    const int n = 100000, c = 10;
    Rng rng(12);
    Tensor logits = randn({n, c}, rng);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(c));
    const float acc = topk_accuracy(logits, labels, 1);
    CHECK(std::abs(acc - 10.0f) < 0.5f);
}

TEST_CASE("adding a constant to every logit row leaves topk unchanged") {
    Rng rng(13);
    Tensor logits = randn({64, 7}, rng);
    std::vector<int> labels(64);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(7));
    const float base = topk_accuracy(logits, labels, 3);
    Tensor shifted(logits.shape());
    auto s = shifted.mut();
    auto x = logits.data();
    for (std::int64_t i = 0; i < logits.numel(); ++i) s[i] = x[i] + 42.5f;
    CHECK(topk_accuracy(shifted, labels, 3) == base);
}

TEST_CASE("sweep selector reproduces the published example row") {
    SweepReport report;
    report.timesteps = {0, 100, 200, 300, 400, 500, 600, 700, 800, 900, 999};
    report.top1 = {56.9f, 59.7f, 58.3f, 57.2f, 56.2f, 54.9f, 53.4f, 51.7f, 50.5f, 49.6f, 48.9f};
    report.top5.assign(11, std::numeric_limits<float>::quiet_NaN());
    finalize_sweep(report);
    CHECK(report.best_timestep == 100);
    CHECK(report.best_top1 == doctest::Approx(59.7f));
}

TEST_CASE("sweep tie-break and degenerate grid") {
    SweepReport tie;
    tie.timesteps = {0, 100, 200};
    tie.top1 = {50.0f, 70.0f, 70.0f};
    tie.top5.assign(3, 0.0f);
    finalize_sweep(tie);
    CHECK(tie.best_timestep == 100);

    SweepReport single;
    single.timesteps = {42};
    single.top1 = {61.5f};
    single.top5 = {0.0f};
    finalize_sweep(single);
    CHECK(single.best_timestep == 42);
    CHECK(single.best_top1 == doctest::Approx(61.5f));
}

TEST_CASE("timestep grid parser") {
    auto def = parse_timestep_grid("0:999:100", 1000);
    REQUIRE(def.size() == 11);
    CHECK(def.front() == 0);
    CHECK(def[9] == 900);
    CHECK(def.back() == 999);

    auto one = parse_timestep_grid("0:0:1", 1000);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == 0);

    CHECK_THROWS_AS(parse_timestep_grid("nope", 1000), UsageError);
    CHECK_THROWS_AS(parse_timestep_grid("0:1500:100", 1000), IndexError);
}

TEST_CASE("extraction determinism, width, and timestep dependence") {
    auto enc = init_encoder(testing::encoder_micro(), 3);
    auto set = synth_shapes(6, 4, 8, 77);
    auto data = preprocess(set, 8, false, 77);
    auto t0a = extract_embeddings(enc, data, 0, 16);
    auto t0b = extract_embeddings(enc, data, 0, 16);
    REQUIRE(t0a.vectors.shape() == Shape{24, 8});
    for (std::int64_t i = 0; i < t0a.vectors.numel(); ++i) {
        CHECK(t0a.vectors.data()[i] == t0b.vectors.data()[i]);
    }
    auto t500 = extract_embeddings(enc, data, 49, 16);
    double frob = 0;
    for (std::int64_t i = 0; i < t0a.vectors.numel(); ++i) {
        const double d = double(t0a.vectors.data()[i]) - t500.vectors.data()[i];
        frob += d * d;
    }
    CHECK(frob > 0.0);
}

TEST_CASE("psnr identity is capped at 99 dB") {
    Rng rng(5);
    Tensor img = randn({1, 1, 8, 8}, rng);
    CHECK(psnr(img, img) == 99.0f);
    Tensor other = randn({1, 1, 8, 8}, rng);
    CHECK(psnr(img, other) < 40.0f);
}

TEST_CASE("reconstruction with the exact-eps oracle scores above 80 dB") {
    auto enc = init_encoder(testing::encoder_micro(), 8);
    auto dit = init_dit(testing::dit_micro(), 8);
    auto sched = make_linear_schedule(1000, 1e-4f, 0.02f);
    auto set = synth_shapes(2, 4, 8, 5);
    auto data = preprocess(set, 8, false, 5);

    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < data.count(); ++i) idx.push_back(i);
    Tensor truth = assemble_batch(data, idx, {});
    Rng rng(6);
    Tensor eps = randn(truth.shape(), rng);
    Predictor oracle = [&](const Tensor&, int) { return eps; };

    auto report =
        reconstruct_report(enc, dit, data, sched, ReconMode::Code, 20, 0, &oracle);
    REQUIRE(report.psnr.size() == static_cast<std::size_t>(data.count()));
    for (float v : report.psnr) CHECK(v > 80.0f);
    CHECK(report.untrained_warning);  // zero-init dit flags the banner
}

TEST_CASE("probe rejects mismatched tables") {
    auto a = blob_table(10, 4, 1, 0.1f, "train");
    auto b = blob_table(10, 6, 2, 0.1f, "test");
    CHECK_THROWS_AS(train_linear_probe(a, b, quick_probe()), DimensionError);
    auto c = blob_table(10, 4, 3, 0.1f, "test");
    c.timestep = 5;
    CHECK_THROWS_AS(train_linear_probe(a, c, quick_probe()), UsageError);
}

TEST_SUITE_END();
