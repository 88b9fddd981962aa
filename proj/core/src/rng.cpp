#include "dier/rng.hpp"

#include <cmath>
#include <numbers>

namespace dier {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

Rng Rng::derive(std::uint64_t seed, std::string_view tag, std::uint64_t salt) {
    return Rng(mix64(seed ^ fnv1a(tag) ^ (salt * 0xD6E8FEB86659FD93ull)));
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) return 0;
    auto v = static_cast<std::int64_t>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
}

void Rng::normal_pair(float out[2]) {
    // Box-Muller; u1 is kept away from 0 so log() stays finite.
    double u1 = uniform();
    double u2 = uniform();
    u1 = 1.0 - u1;  // (0, 1]
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    out[0] = static_cast<float>(r * std::cos(a));
    out[1] = static_cast<float>(r * std::sin(a));
}

void Rng::fill_normal(std::span<float> out) {
    std::size_t i = 0;
    float pair[2];
    for (; i + 1 < out.size(); i += 2) {
        normal_pair(pair);
        out[i] = pair[0];
        out[i + 1] = pair[1];
    }
    if (i < out.size()) {
        normal_pair(pair);
        out[i] = pair[0];
    }
}

void Rng::fill_uniform(std::span<float> out, float lo, float hi) {
    for (auto& v : out) v = lo + static_cast<float>(uniform()) * (hi - lo);
}

void Rng::shuffle(std::vector<std::int64_t>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
        std::int64_t j = uniform_int(i + 1);
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
}

}  // namespace dier
