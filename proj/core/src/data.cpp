#include "dier/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dier/errors.hpp"

namespace dier {

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) {
        throw DataError(path + ": truncated while reading " + what + " at offset " +
                        std::to_string(static_cast<long long>(in.tellg())));
    }
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

LabeledImageSet read_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError("cannot open " + labels_path);

    const std::uint32_t img_magic = read_u32_be(img, images_path, "magic");
    if (img_magic != kIdxImagesMagic) {
        throw DataError(images_path + ": bad image magic at offset 0 (got 0x" +
                        [&] {
                            char b[16];
                            std::snprintf(b, sizeof b, "%08x", img_magic);
                            return std::string(b);
                        }() +
                        ", want 0x00000803)");
    }
    const std::uint32_t n = read_u32_be(img, images_path, "count");
    const std::uint32_t h = read_u32_be(img, images_path, "rows");
    const std::uint32_t w = read_u32_be(img, images_path, "cols");

    const std::uint32_t lab_magic = read_u32_be(lab, labels_path, "magic");
    if (lab_magic != kIdxLabelsMagic) {
        throw DataError(labels_path + ": bad label magic at offset 0 (want 0x00000801)");
    }
    const std::uint32_t ln = read_u32_be(lab, labels_path, "count");
    if (ln != n) {
        throw DataError("image/label counts disagree: " + std::to_string(n) + " images vs " +
                        std::to_string(ln) + " labels");
    }

    LabeledImageSet set;
    set.name = std::filesystem::path(images_path).filename().string();
    set.channels = 1;
    set.height = static_cast<int>(h);
    set.width = static_cast<int>(w);
    set.images.resize(static_cast<std::size_t>(n) * h * w);
    img.read(reinterpret_cast<char*>(set.images.data()),
             static_cast<std::streamsize>(set.images.size()));
    if (img.gcount() != static_cast<std::streamsize>(set.images.size())) {
        throw DataError(images_path + ": truncated payload, expected " +
                        std::to_string(set.images.size()) + " bytes");
    }
    std::vector<std::uint8_t> raw_labels(n);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n));
    if (lab.gcount() != static_cast<std::streamsize>(n)) {
        throw DataError(labels_path + ": truncated payload, expected " + std::to_string(n) +
                        " bytes");
    }
    set.labels.reserve(n);
    int max_label = 0;
    for (auto b : raw_labels) {
        set.labels.push_back(static_cast<int>(b));
        max_label = std::max(max_label, static_cast<int>(b));
    }
    set.class_count = max_label + 1;
    return set;
}

void write_idx(const LabeledImageSet& set, const std::string& images_path,
               const std::string& labels_path) {
    if (set.channels != 1) throw DataError("IDX export supports single-channel sets only");
    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    if (!img) throw IoError("cannot write " + images_path);
    write_u32_be(img, kIdxImagesMagic);
    write_u32_be(img, static_cast<std::uint32_t>(set.count()));
    write_u32_be(img, static_cast<std::uint32_t>(set.height));
    write_u32_be(img, static_cast<std::uint32_t>(set.width));
    img.write(reinterpret_cast<const char*>(set.images.data()),
              static_cast<std::streamsize>(set.images.size()));

    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!lab) throw IoError("cannot write " + labels_path);
    write_u32_be(lab, kIdxLabelsMagic);
    write_u32_be(lab, static_cast<std::uint32_t>(set.count()));
    for (int v : set.labels) {
        const char b = static_cast<char>(v);
        lab.write(&b, 1);
    }
    if (!img || !lab) throw IoError("short write while exporting IDX files");
}

// ---------------- synthetic sets ----------------

namespace {

constexpr int kShapeKinds = 8;

// Foreground area at r = 1, per kind; radii are rescaled by these so every
// class carries the same expected foreground mass. Keeps pooled first-order
// statistics class-blind and forces probes onto shape identity.
constexpr double kShapeArea[kShapeKinds] = {3.14, 2.89, 2.02, 2.0, 2.36, 2.0, 2.0, 1.75};

bool shape_hit(int kind, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (kind) {
        case 0:  // disc
            return dx * dx + dy * dy <= r * r;
        case 1:  // filled square
            return ax <= 0.85 * r && ay <= 0.85 * r;
        case 2:  // plus sign
            return (ax <= 0.32 * r && ay <= r) || (ay <= 0.32 * r && ax <= r);
        case 3: {  // horizontal stripes in a box
            if (ax > r || ay > r) return false;
            const double band = std::max(1.0, r / 1.5);
            return static_cast<long long>(std::floor((dy + r) / band)) % 2 == 0;
        }
        case 4: {  // ring
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.5 * 0.5 * r * r;
        }
        case 5:  // upward triangle
            return ay <= r && ax <= 0.5 * (dy + r);
        case 6: {  // checkerboard
            if (ax > r || ay > r) return false;
            const double cell = std::max(1.0, 2.0 * r / 3.0);
            const long long cx = static_cast<long long>(std::floor((dx + r) / cell));
            const long long cy = static_cast<long long>(std::floor((dy + r) / cell));
            return (cx + cy) % 2 == 0;
        }
        case 7:  // diagonal X
            return ax <= r && ay <= r && (std::abs(dx - dy) <= 0.35 * r ||
                                          std::abs(dx + dy) <= 0.35 * r);
        default:
            return false;
    }
}

}  // namespace

LabeledImageSet synth_shapes(int n_per_class, int classes, int size, std::uint64_t seed) {
    if (classes < 1 || classes > kShapeKinds) {
        throw ConfigError("synth_shapes supports 1.." + std::to_string(kShapeKinds) +
                          " classes, got " + std::to_string(classes));
    }
    if (size < 8) throw ConfigError("synth_shapes needs size >= 8");
    if (n_per_class < 1) throw ConfigError("synth_shapes needs n_per_class >= 1");

    LabeledImageSet set;
    set.name = "synth-shapes";
    set.channels = 1;
    set.height = size;
    set.width = size;
    set.class_count = classes;
    const std::int64_t n = static_cast<std::int64_t>(n_per_class) * classes;
    set.images.resize(static_cast<std::size_t>(n) * size * size);
    set.labels.resize(static_cast<std::size_t>(n));

    for (std::int64_t i = 0; i < n; ++i) {
        const int kind = static_cast<int>(i % classes);
        set.labels[static_cast<std::size_t>(i)] = kind;
        Rng rng = Rng::derive(seed, "shape", static_cast<std::uint64_t>(i) + 1);

        const double cx = size * (0.32 + 0.36 * rng.uniform());
        const double cy = size * (0.32 + 0.36 * rng.uniform());
        const double r = size * (0.20 + 0.17 * rng.uniform()) *
                         std::sqrt(2.2 / kShapeArea[kind]);
        // Random in-plane rotation removes edge-orientation statistics as a
        // class cue; glyph identity survives any rotation.
        const double angle = 2.0 * 3.14159265358979 * rng.uniform();
        const double ca = std::cos(angle), sa = std::sin(angle);
        const bool inverted = rng.uniform() < 0.25;
        const double fg = inverted ? 30.0 + 60.0 * rng.uniform() : 160.0 + 80.0 * rng.uniform();
        const double bg = inverted ? 150.0 + 70.0 * rng.uniform() : 40.0 + 60.0 * rng.uniform();
        // Low-frequency background ramp in a random direction.
        const double ramp = 50.0 * (rng.uniform() - 0.5);
        const double rdx = rng.uniform() - 0.5, rdy = rng.uniform() - 0.5;

        std::uint8_t* px = set.images.data() + static_cast<std::size_t>(i) * size * size;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double ux = x - cx, uy = y - cy;
                const bool hit = shape_hit(kind, ca * ux + sa * uy, -sa * ux + ca * uy, r);
                const double tilt = ramp * ((x * rdx + y * rdy) / size);
                double v = (hit ? fg : bg + tilt) + 36.0 * (rng.uniform() - 0.5);
                px[y * size + x] =
                    static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }
    }
    return set;
}

namespace {

// 5x7 digit glyphs, one row per byte, 5 low bits used (MSB = leftmost).
constexpr std::uint8_t kDigitFont[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

}  // namespace

LabeledImageSet synth_digits(int n_per_class, int size, std::uint64_t seed) {
    if (size < 8) throw ConfigError("synth_digits needs size >= 8");
    if (n_per_class < 1) throw ConfigError("synth_digits needs n_per_class >= 1");

    LabeledImageSet set;
    set.name = "synth-digits";
    set.channels = 1;
    set.height = size;
    set.width = size;
    set.class_count = 10;
    const std::int64_t n = static_cast<std::int64_t>(n_per_class) * 10;
    set.images.resize(static_cast<std::size_t>(n) * size * size);
    set.labels.resize(static_cast<std::size_t>(n));

    for (std::int64_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(i % 10);
        set.labels[static_cast<std::size_t>(i)] = digit;
        Rng rng = Rng::derive(seed, "digit", static_cast<std::uint64_t>(i) + 1);

        const double scale = (0.55 + 0.25 * rng.uniform()) * size;  // glyph box height
        const double gw = scale * 5.0 / 7.0;
        const double ox = (size - gw) * rng.uniform();
        const double oy = (size - scale) * rng.uniform();
        const double bg_level = 50.0 + 60.0 * rng.uniform();
        const double fg = bg_level + 35.0 + 45.0 * rng.uniform();
        const double slant = 0.35 * (rng.uniform() - 0.5);

        std::uint8_t* px = set.images.data() + static_cast<std::size_t>(i) * size * size;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double gy = (y - oy) / scale * 7.0;
                const double gx = (x - ox - slant * (y - oy)) / gw * 5.0;
                bool on = false;
                if (gy >= 0 && gy < 7 && gx >= 0 && gx < 5) {
                    const int row = static_cast<int>(gy);
                    const int col = static_cast<int>(gx);
                    on = (kDigitFont[digit][row] >> (4 - col)) & 1;
                }
                double v = (on ? fg : bg_level) + 32.0 * (rng.uniform() - 0.5);
                px[y * size + x] =
                    static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }
    }
    return set;
}

LabeledImageSet take_first(const LabeledImageSet& set, std::int64_t n) {
    if (n <= 0 || n >= set.count()) return set;
    LabeledImageSet out = set;
    out.labels.assign(set.labels.begin(), set.labels.begin() + n);
    out.images.assign(set.images.begin(),
                      set.images.begin() + n * set.image_bytes());
    return out;
}

// ---------------- preprocessing ----------------

PixelDataset preprocess(const LabeledImageSet& set, int target_size, bool augment_flip,
                        std::uint64_t seed) {
    if (set.count() == 0) throw DataError("cannot preprocess an empty dataset");
    if (target_size <= 0) target_size = set.height;
    if (target_size < set.height && target_size != set.height) {
        // Downscale permitted for desk-scale nano runs; nearest keeps exactness.
    }
    PixelDataset out;
    out.name = set.name;
    out.labels = set.labels;
    out.class_count = set.class_count;
    out.augment_flip = augment_flip;
    out.seed = seed;
    const std::int64_t n = set.count();
    const int c = set.channels;
    out.images = Tensor({n, c, target_size, target_size});
    auto dst = out.images.mut();
    const std::int64_t plane = static_cast<std::int64_t>(target_size) * target_size;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint8_t* src = set.images.data() + i * set.image_bytes();
        for (int ch = 0; ch < c; ++ch) {
            float* d = dst.data() + (i * c + ch) * plane;
            const std::uint8_t* s =
                src + static_cast<std::int64_t>(ch) * set.height * set.width;
            for (int y = 0; y < target_size; ++y) {
                const int sy = static_cast<int>(static_cast<std::int64_t>(y) * set.height /
                                                target_size);
                for (int x = 0; x < target_size; ++x) {
                    const int sx = static_cast<int>(static_cast<std::int64_t>(x) * set.width /
                                                    target_size);
                    d[y * target_size + x] =
                        static_cast<float>(s[sy * set.width + sx]) / 127.5f - 1.0f;
                }
            }
        }
    }
    return out;
}

std::vector<std::int64_t> epoch_order(const PixelDataset& data, std::int64_t epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(data.count()));
    for (std::int64_t i = 0; i < data.count(); ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng::derive(data.seed, "epoch-order", static_cast<std::uint64_t>(epoch) + 1);
    rng.shuffle(order);
    return order;
}

std::vector<std::uint8_t> epoch_flips(const PixelDataset& data, std::int64_t epoch) {
    std::vector<std::uint8_t> flips(static_cast<std::size_t>(data.count()), 0);
    if (!data.augment_flip) return flips;
    Rng rng = Rng::derive(data.seed, "epoch-flip", static_cast<std::uint64_t>(epoch) + 1);
    for (auto& f : flips) f = rng.uniform() < 0.5 ? 1 : 0;
    return flips;
}

Tensor assemble_batch(const PixelDataset& data, std::span<const std::int64_t> indices,
                      std::span<const std::uint8_t> flips) {
    const std::int64_t c = data.images.dim(1);
    const std::int64_t h = data.images.dim(2);
    const std::int64_t w = data.images.dim(3);
    Tensor out({static_cast<std::int64_t>(indices.size()), c, h, w});
    auto src = data.images.data();
    auto dst = out.mut();
    const std::int64_t item = c * h * w;
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const std::int64_t i = indices[b];
        const float* s = src.data() + i * item;
        float* d = dst.data() + static_cast<std::int64_t>(b) * item;
        const bool flip = !flips.empty() && flips[static_cast<std::size_t>(i)] != 0;
        if (!flip) {
            std::memcpy(d, s, static_cast<std::size_t>(item) * sizeof(float));
        } else {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                for (std::int64_t y = 0; y < h; ++y) {
                    const float* row = s + (ch * h + y) * w;
                    float* drow = d + (ch * h + y) * w;
                    for (std::int64_t x = 0; x < w; ++x) drow[x] = row[w - 1 - x];
                }
            }
        }
    }
    return out;
}

DatasetPair load_dataset_spec(const std::string& spec, std::uint64_t seed) {
    if (spec.rfind("synth:", 0) == 0) {
        const std::string rest = spec.substr(6);
        auto parse_dims = [&](const std::string& s) {
            std::vector<int> vals;
            std::size_t pos = 0;
            while (pos <= s.size()) {
                const std::size_t next = s.find('x', pos);
                const std::string tok =
                    s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
                if (tok.empty()) throw DataError("bad synth spec: " + spec);
                vals.push_back(std::atoi(tok.c_str()));
                if (next == std::string::npos) break;
                pos = next + 1;
            }
            return vals;
        };
        if (rest.rfind("shapes:", 0) == 0) {
            auto v = parse_dims(rest.substr(7));
            if (v.size() != 3) {
                throw DataError("expected synth:shapes:<classes>x<per-class>x<size>");
            }
            DatasetPair pair;
            pair.train = synth_shapes(v[1], v[0], v[2], Rng::derive(seed, "synth-train").key());
            pair.test = synth_shapes(std::max(1, v[1] / 4), v[0], v[2],
                                     Rng::derive(seed, "synth-test").key());
            return pair;
        }
        if (rest.rfind("digits:", 0) == 0) {
            auto v = parse_dims(rest.substr(7));
            if (v.size() != 2) throw DataError("expected synth:digits:<per-class>x<size>");
            DatasetPair pair;
            pair.train = synth_digits(v[0], v[1], Rng::derive(seed, "synth-train").key());
            pair.test = synth_digits(std::max(1, v[0] / 4), v[1],
                                     Rng::derive(seed, "synth-test").key());
            return pair;
        }
        throw DataError("unknown synth dataset: " + spec);
    }
    namespace fs = std::filesystem;
    const fs::path dir(spec);
    if (!fs::is_directory(dir)) {
        throw DataError("data path is neither a synth spec nor a directory: " + spec);
    }
    DatasetPair pair;
    pair.train = read_idx((dir / "train-images-idx3-ubyte").string(),
                          (dir / "train-labels-idx1-ubyte").string());
    pair.test = read_idx((dir / "t10k-images-idx3-ubyte").string(),
                         (dir / "t10k-labels-idx1-ubyte").string());
    const int classes = std::max(pair.train.class_count, pair.test.class_count);
    pair.train.class_count = classes;
    pair.test.class_count = classes;
    return pair;
}

}  // namespace dier
