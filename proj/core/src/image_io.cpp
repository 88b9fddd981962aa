#include "dier/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dier/errors.hpp"

namespace dier {

namespace {

float to01(float v) { return std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f); }

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(to01(v) * 255.0f));
}

}  // namespace

float psnr(const Tensor& a, const Tensor& b, float cap_db) {
    if (a.shape() != b.shape()) {
        throw DimensionError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    double mse = 0.0;
    auto av = a.data();
    auto bv = b.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(to01(av[i])) - static_cast<double>(to01(bv[i]));
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return cap_db;
    const double db = -10.0 * std::log10(mse);
    return std::min(static_cast<float>(db), cap_db);
}

namespace {

void write_p6(std::ofstream& out, const Tensor& img, std::int64_t item) {
    const std::int64_t c = img.dim(img.ndim() - 3);
    const std::int64_t h = img.dim(img.ndim() - 2);
    const std::int64_t w = img.dim(img.ndim() - 1);
    auto v = img.data();
    const float* base = v.data() + item * c * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                const std::int64_t src_ch = c == 3 ? ch : 0;
                const std::uint8_t byte = to_byte(base[(src_ch * h + y) * w + x]);
                out.put(static_cast<char>(byte));
            }
        }
    }
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw DimensionError("write_ppm expects [C,H,W] with C in {1,3}, got " +
                             shape_str(img.shape()));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << img.dim(2) << ' ' << img.dim(1) << "\n255\n";
    write_p6(out, img, 0);
    if (!out) throw IoError("short write to " + path);
}

void write_pair_grid_ppm(const std::string& path, const Tensor& left, const Tensor& right) {
    if (left.shape() != right.shape() || left.ndim() != 4) {
        throw DimensionError("write_pair_grid_ppm expects matching [N,C,H,W] tensors");
    }
    const std::int64_t n = left.dim(0), c = left.dim(1), h = left.dim(2), w = left.dim(3);
    const std::int64_t margin = 2;
    const std::int64_t gw = 2 * w + 3 * margin;
    const std::int64_t gh = n * h + (n + 1) * margin;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << gw << ' ' << gh << "\n255\n";

    auto lv = left.data();
    auto rv = right.data();
    auto pixel_at = [&](std::span<const float> v, std::int64_t item, std::int64_t ch,
                        std::int64_t y, std::int64_t x) {
        const std::int64_t src_ch = c == 3 ? ch : 0;
        return to_byte(v[((item * c + src_ch) * h + y) * w + x]);
    };
    for (std::int64_t gy = 0; gy < gh; ++gy) {
        for (std::int64_t gx = 0; gx < gw; ++gx) {
            const std::int64_t row = (gy - margin) / (h + margin);
            const std::int64_t y = gy - margin - row * (h + margin);
            std::uint8_t rgb[3] = {255, 255, 255};
            if (gy >= margin && row >= 0 && row < n && y >= 0 && y < h) {
                if (gx >= margin && gx < margin + w) {
                    for (int ch = 0; ch < 3; ++ch) {
                        rgb[ch] = pixel_at(lv, row, ch, y, gx - margin);
                    }
                } else if (gx >= 2 * margin + w && gx < 2 * margin + 2 * w) {
                    for (int ch = 0; ch < 3; ++ch) {
                        rgb[ch] = pixel_at(rv, row, ch, y, gx - 2 * margin - w);
                    }
                }
            }
            out.write(reinterpret_cast<const char*>(rgb), 3);
        }
    }
    if (!out) throw IoError("short write to " + path);
}

}  // namespace dier
