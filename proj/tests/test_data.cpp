#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dier/data.hpp"
#include "dier/probe.hpp"

using namespace dier;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("data-io");

namespace {

std::string scratch_dir(const std::string& leaf) {
    auto p = fs::temp_directory_path() / "dier-tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("idx header parsing on crafted files") {
    const std::string dir = scratch_dir("idx");
    const std::string img = dir + "/images";
    const std::string lab = dir + "/labels";

    std::vector<unsigned char> img_bytes{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
    for (int i = 0; i < 2 * 2 * 3; ++i) img_bytes.push_back(static_cast<unsigned char>(i));
    std::vector<unsigned char> lab_bytes{0, 0, 8, 1, 0, 0, 0, 2, 1, 0};
    write_bytes(img, img_bytes);
    write_bytes(lab, lab_bytes);

    auto set = read_idx(img, lab);
    CHECK(set.count() == 2);
    CHECK(set.height == 2);
    CHECK(set.width == 3);
    CHECK(set.labels[0] == 1);
    CHECK(set.images[0] == 0);
    CHECK(set.images[11] == 11);

    SUBCASE("mismatched counts") {
        std::vector<unsigned char> bad_lab{0, 0, 8, 1, 0, 0, 0, 3, 1, 0, 1};
        write_bytes(lab, bad_lab);
        CHECK_THROWS_AS(read_idx(img, lab), DataError);
    }
    SUBCASE("bad magic mentions the offset") {
        std::vector<unsigned char> bad = img_bytes;
        bad[3] = 9;
        write_bytes(img, bad);
        try {
            read_idx(img, lab);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
        }
    }
    SUBCASE("truncated payload") {
        std::vector<unsigned char> bad(img_bytes.begin(), img_bytes.end() - 5);
        write_bytes(img, bad);
        CHECK_THROWS_AS(read_idx(img, lab), DataError);
    }
    SUBCASE("empty file is an error, not a crash") {
        write_bytes(img, {});
        CHECK_THROWS_AS(read_idx(img, lab), DataError);
    }
}

TEST_CASE("idx roundtrip on a synthetic set") {
    const std::string dir = scratch_dir("idx-rt");
    auto set = synth_shapes(5, 4, 12, 9);
    write_idx(set, dir + "/im", dir + "/la");
    auto back = read_idx(dir + "/im", dir + "/la");
    CHECK(back.images == set.images);
    CHECK(back.labels == set.labels);
    CHECK(back.height == set.height);
    CHECK(back.width == set.width);
}

TEST_CASE("synthetic generators are deterministic with uniform labels") {
    auto a = synth_shapes(10, 4, 16, 5);
    auto b = synth_shapes(10, 4, 16, 5);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    auto c = synth_shapes(10, 4, 16, 6);
    CHECK(a.images != c.images);

    std::vector<int> hist(4, 0);
    for (int l : a.labels) ++hist[static_cast<std::size_t>(l)];
    for (int h : hist) CHECK(h == 10);

    // Interleaved labels keep any prefix balanced.
    auto head = take_first(a, 8);
    std::vector<int> hist2(4, 0);
    for (int l : head.labels) ++hist2[static_cast<std::size_t>(l)];
    for (int h : hist2) CHECK(h == 2);

    CHECK_THROWS_AS(synth_shapes(10, 9, 16, 5), ConfigError);

    auto d1 = synth_digits(3, 16, 1);
    auto d2 = synth_digits(3, 16, 1);
    CHECK(d1.images == d2.images);
    CHECK(d1.class_count == 10);
}

TEST_CASE("preprocess endpoint mapping and bounds") {
    LabeledImageSet set;
    set.channels = 1;
    set.height = 2;
    set.width = 2;
    set.class_count = 1;
    set.images = {0, 255, 128, 64};
    set.labels = {0};
    auto data = preprocess(set, 2, false, 0);
    CHECK(data.images.data()[0] == -1.0f);
    CHECK(data.images.data()[1] == 1.0f);
    for (float v : data.images.data()) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("nearest resize to the model input size") {
    auto set = synth_digits(2, 28, 3);
    auto data = preprocess(set, 16, false, 3);
    CHECK(data.images.shape() == Shape{20, 1, 16, 16});
    for (float v : data.images.data()) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("epoch order is a pure function of seed and epoch") {
    auto set = synth_shapes(8, 4, 8, 1);
    auto data = preprocess(set, 8, true, 42);
    auto o1 = epoch_order(data, 3);
    auto o2 = epoch_order(data, 3);
    CHECK(o1 == o2);
    auto o3 = epoch_order(data, 4);
    CHECK(o1 != o3);

    auto f1 = epoch_flips(data, 3);
    auto f2 = epoch_flips(data, 3);
    CHECK(f1 == f2);
    bool any = false;
    for (auto f : f1) any = any || f != 0;
    CHECK(any);

    data.augment_flip = false;
    auto f3 = epoch_flips(data, 3);
    for (auto f : f3) CHECK(f == 0);
}

TEST_CASE("horizontal flip is an involution") {
    auto set = synth_shapes(2, 4, 8, 2);
    auto data = preprocess(set, 8, true, 2);
    std::vector<std::int64_t> idx{0, 1, 2};
    std::vector<std::uint8_t> flips(static_cast<std::size_t>(data.count()), 1);
    auto flipped = assemble_batch(data, idx, flips);
    // flip the flipped batch by hand
    PixelDataset tmp = data;
    tmp.images = flipped;
    tmp.labels.assign(3, 0);
    std::vector<std::uint8_t> flips2(3, 1);
    std::vector<std::int64_t> idx2{0, 1, 2};
    auto restored = assemble_batch(tmp, idx2, flips2);
    auto plain = assemble_batch(data, idx, {});
    for (std::int64_t i = 0; i < plain.numel(); ++i) {
        CHECK(restored.data()[i] == plain.data()[i]);
    }
}

TEST_CASE("dataset specs resolve") {
    auto pair = load_dataset_spec("synth:shapes:4x8x16", 3);
    CHECK(pair.train.count() == 32);
    CHECK(pair.test.count() == 8);
    CHECK(pair.train.class_count == 4);

    auto digits = load_dataset_spec("synth:digits:4x16", 3);
    CHECK(digits.train.count() == 40);
    CHECK(digits.train.class_count == 10);

    CHECK_THROWS_AS(load_dataset_spec("synth:fractals:3x3x3", 0), DataError);
    CHECK_THROWS_AS(load_dataset_spec("/no/such/dir", 0), DataError);
}

TEST_CASE("raw pixels probe poorly on the shape set") {
    // Calibrates the generator difficulty: linear probing on pixels must be
    // weak while the classes stay learnable from shape identity.
    auto train_set = synth_shapes(500, 4, 16, 1001);
    auto test_set = synth_shapes(125, 4, 16, 1002);
    auto train = preprocess(train_set, 16, false, 1);
    auto test = preprocess(test_set, 16, false, 1);
    ProbeConfig cfg;
    cfg.epochs = 100;
    cfg.warmup_epochs = 10;
    cfg.batch_size = 256;
    cfg.peak_lr = 2e-4f * 2;
    auto res = train_linear_probe(pixel_table(train, "train"), pixel_table(test, "test"), cfg);
    INFO("raw-pixel top1 = ", res.top1);
    CHECK(res.top1 < 75.0f);
    CHECK(res.top1 > 25.0f);
}

TEST_SUITE_END();
