#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace neuropipe {

// splitmix64 mix function. All randomness in the engine derives from this,
// never from std:: distributions, so draws are identical across platforms
// and any stream can be re-derived out of order from (seed, salts...).
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t value) {
    return mix64(seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

inline uint64_t hash_u64s(std::initializer_list<uint64_t> values) {
    uint64_t h = 0x853c49e6748fea9bULL;
    for (uint64_t v : values) {
        h = hash_combine(h, v);
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    // Independent stream keyed by salt; order of forks does not matter.
    Rng fork(uint64_t salt) const { return Rng(hash_combine(state_, salt)); }

    uint64_t state() const { return state_; }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Unbiased-enough integer in [0, n) via 128-bit multiply (Lemire).
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    double next_double() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float next_float() {  // [0, 1)
        return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    bool bernoulli(double p) { return next_double() < p; }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    uint64_t state_;
};

}  // namespace neuropipe
