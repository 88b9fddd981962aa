#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace dier {

// Counter-based random stream: output i is a pure function of (key, i), so
// the whole state is two u64 words. That makes checkpointed training resume
// bit-exact: serialize (key, counter), restore, continue.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t counter = 0)
        : key_(seed), counter_(counter) {}

    // Derive an independent substream (e.g. "init", "train", "data").
    static Rng derive(std::uint64_t seed, std::string_view tag, std::uint64_t salt = 0);

    std::uint64_t next_u64() {
        std::uint64_t z = key_ + counter_ * 0x9E3779B97F4A7C15ull;
        ++counter_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n);

    // Standard normal. Every draw consumes exactly two counter steps so the
    // stream position is a pure function of the number of values produced.
    float normal() {
        float pair[2];
        normal_pair(pair);
        return pair[0];
    }

    void fill_normal(std::span<float> out);
    void fill_uniform(std::span<float> out, float lo, float hi);

    // Fisher-Yates over an index vector.
    void shuffle(std::vector<std::int64_t>& v);

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void set_state(std::uint64_t key, std::uint64_t counter) {
        key_ = key;
        counter_ = counter;
    }

private:
    void normal_pair(float out[2]);

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace dier
