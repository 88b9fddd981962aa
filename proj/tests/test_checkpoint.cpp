#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dier/checkpoint.hpp"
#include "dier/probe.hpp"
#include "dier/run_config.hpp"
#include "testing_util.hpp"

using namespace dier;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("artifact-store");

namespace {

std::string scratch_dir(const std::string& leaf) {
    auto p = fs::temp_directory_path() / "dier-tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

TrainState make_state(std::uint64_t seed) {
    RunConfig rc;
    rc.dit = testing::dit_micro();
    rc.encoder = testing::encoder_micro();
    rc.train.timesteps = 50;
    TrainState st;
    st.encoder = init_encoder(rc.encoder, seed);
    st.dit = init_dit(rc.dit, seed);
    st.sched = make_linear_schedule(50, 1e-4f, 0.02f);
    st.train_cfg = rc.train;
    st.rng_key = 123;
    st.rng_counter = 456;
    st.step = 7;
    st.config_text = serialize_run_config(rc);
    // some optimizer moments
    for (const auto& [name, t] : st.encoder.p.params) {
        st.opt.m.emplace("enc." + name, Tensor(t.shape()));
        st.opt.v.emplace("enc." + name, Tensor(t.shape()));
    }
    st.opt.step = 7;
    return st;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("save/load reproduces forward outputs bit-exactly") {
    const std::string dir = scratch_dir("roundtrip");
    auto st = make_state(8);
    testing::randomize_zero_params(st.dit, 9);
    const std::string path = dir + "/state.dier";
    save_train_state(path, st);

    auto loaded = load_train_state(path);
    CHECK(loaded.step == 7);
    CHECK(loaded.rng_key == 123);
    CHECK(loaded.rng_counter == 456);
    CHECK(loaded.opt.m.size() == st.opt.m.size());

    Rng rng(3);
    Tensor x = randn({2, 1, 8, 8}, rng);
    Tensor v = randn({2, 8}, rng);
    std::vector<int> ts{3, 40};
    auto before = dit_forward(st.dit, x, ts, v);
    auto after = dit_forward(loaded.dit, x, ts, v);
    for (std::int64_t i = 0; i < before.numel(); ++i) {
        CHECK(before.data()[i] == after.data()[i]);
    }
    auto enc_before = encoder_forward(st.encoder, x, ts);
    auto enc_after = encoder_forward(loaded.encoder, x, ts);
    for (std::int64_t i = 0; i < enc_before.numel(); ++i) {
        CHECK(enc_before.data()[i] == enc_after.data()[i]);
    }
}

TEST_CASE("canonical serialization is byte-identical") {
    const std::string dir = scratch_dir("canonical");
    auto st = make_state(4);
    save_train_state(dir + "/a.dier", st);
    save_train_state(dir + "/b.dier", st);
    CHECK(slurp(dir + "/a.dier") == slurp(dir + "/b.dier"));
}

TEST_CASE("a crash between temp-write and rename leaves the old file intact") {
    const std::string dir = scratch_dir("atomic");
    const std::string path = dir + "/state.dier";
    auto v1 = make_state(1);
    save_train_state(path, v1);
    auto v1_bytes = slurp(path);

    // Simulated crash: the new version reaches the temp file only.
    CheckpointData half;
    half.config_text = "interrupted";
    half.tensors.emplace("w", Tensor({2}, {9.0f, 9.0f}));
    write_checkpoint_file(path + ".tmp", half);

    CHECK(slurp(path) == v1_bytes);
    auto reloaded = load_train_state(path);
    CHECK(reloaded.step == v1.step);
}

TEST_CASE("truncated checkpoints are rejected without partial state") {
    const std::string dir = scratch_dir("trunc");
    const std::string path = dir + "/state.dier";
    auto st = make_state(2);
    save_train_state(path, st);
    auto bytes = slurp(path);

    for (std::size_t keep : {std::size_t(3), bytes.size() / 2, bytes.size() - 4}) {
        std::ofstream out(path + ".cut", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(keep));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path + ".cut"), CheckpointError);
    }
}

TEST_CASE("payload-length corruption names the tensor") {
    const std::string dir = scratch_dir("corrupt");
    const std::string path = dir + "/c.dier";
    CheckpointData data;
    data.config_text = "x";
    data.tensors.emplace("alpha", Tensor({4}, {1, 2, 3, 4}));
    save_checkpoint(path, data);
    auto bytes = slurp(path);
    // Drop the trailing u64 triple plus part of the payload.
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 30));
    out.close();
    try {
        load_checkpoint(path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }
}

TEST_CASE("version mismatch asks for an upgrade") {
    const std::string dir = scratch_dir("version");
    const std::string path = dir + "/v.dier";
    CheckpointData data;
    data.tensors.emplace("w", Tensor({1}, {1.0f}));
    save_checkpoint(path, data);
    auto bytes = slurp(path);
    bytes[4] = 9;  // version field
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    try {
        load_checkpoint(path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("upgrade") != std::string::npos);
    }
}

TEST_CASE("embedding export: csv rows, bin roundtrip, csv precision") {
    const std::string dir = scratch_dir("embed");
    EmbeddingTable table;
    table.vectors = Tensor({2, 3}, {0.123456789f, -1.5f, 3.25f, 9.0f, -0.000123f, 7.0f});
    table.labels = {1, 0};
    table.class_count = 2;
    table.timestep = 100;

    const std::string csv = dir + "/e.csv";
    export_embeddings(table, csv, EmbeddingFormat::Csv);
    {
        std::ifstream in(csv);
        std::string line;
        int lines = 0;
        std::string first;
        while (std::getline(in, line)) {
            if (lines == 0) first = line;
            ++lines;
        }
        CHECK(lines == 3);  // header + 2 rows
        CHECK(first == "label,v0,v1,v2");
    }
    auto csv_back = import_embeddings(csv, EmbeddingFormat::Csv);
    REQUIRE(csv_back.vectors.shape() == table.vectors.shape());
    for (std::int64_t i = 0; i < table.vectors.numel(); ++i) {
        const double a = table.vectors.data()[i];
        const double b = csv_back.vectors.data()[i];
        CHECK(std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(a)));
    }
    CHECK(csv_back.labels == table.labels);

    const std::string bin = dir + "/e.bin";
    export_embeddings(table, bin, EmbeddingFormat::Bin);
    auto bin_back = import_embeddings(bin, EmbeddingFormat::Bin);
    for (std::int64_t i = 0; i < table.vectors.numel(); ++i) {
        CHECK(bin_back.vectors.data()[i] == table.vectors.data()[i]);
    }
    CHECK(bin_back.labels == table.labels);
}

TEST_SUITE_END();
