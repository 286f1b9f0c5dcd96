#pragma once

#include <cstdint>
#include <random>

namespace fsd {

// Stable 64-bit mixer, used to derive per-stack and per-epoch seeds so that
// independent streams never share state.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (stream * 0x9e3779b97f4a7c15ull + 0x6a09e667f3bcc909ull);
    splitmix64(s);
    return splitmix64(s);
}

// mt19937_64 gives identical raw output on every platform; the float mappings
// below avoid std::uniform_real_distribution, whose results are
// implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi)
    int64_t randint(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = randint(0, i + 1);
            std::swap(v[i], v[j]);
        }
    }

    uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

} // namespace fsd
