#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace sghf::rng {

// splitmix64 step: advances the state and returns a mixed 64-bit word.
// Fully pinned so that streams are reproducible across platforms and
// standard-library versions (std::normal_distribution is not).
inline uint64_t splitmix64(uint64_t& s) {
    s += 0x9e3779b97f4a7c15ULL;
    uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t mix(uint64_t h, uint64_t v) {
    uint64_t s = h ^ (v * 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

// Deterministic random stream. Independent streams are derived by key,
// so results do not depend on the order in which streams are consumed.
class Stream {
public:
    explicit Stream(uint64_t key) : state_(key) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    double normal(double mu, double sd) { return mu + sd * normal(); }

    // Unbiased integer in [0, n) via rejection sampling.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Named substream of a master seed. Extra integer tags select e.g. the
// fold, epoch or subject id.
inline Stream substream(uint64_t seed, std::string_view name, uint64_t a = 0, uint64_t b = 0) {
    uint64_t key = mix(seed, hash_str(name));
    key = mix(key, a + 1);
    key = mix(key, b + 1);
    return Stream(key);
}

}  // namespace sghf::rng
