#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace wsol {

// Deterministic 64-bit stream (splitmix64). All seeded behaviour in the
// toolkit draws from this generator instead of the standard library's
// distributions, so identical seeds give identical bytes on any platform.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is irrelevant at the sizes used here.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Stable combination of a base seed with a stream id (per-sample seeding).
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        SplitMix64 g(seed);
        SplitMix64 h(g.next_u64() ^ (stream * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull));
        return h.next_u64();
    }

private:
    uint64_t state_;
};

// Fisher-Yates with an explicit generator; std::shuffle's draw sequence is
// implementation-defined, this one is not.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, SplitMix64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace wsol
