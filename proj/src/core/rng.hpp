#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stpp {

/// splitmix64 step; advances state and returns a mixed 64-bit word.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a stream id.
/// All randomness in the project flows from one root seed through this
/// function, so runs are reproducible end to end.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t s = root;
    (void)splitmix64(s);
    s ^= 0xd1b54a32d192ed03ull * (stream + 1);
    (void)splitmix64(s);
    return splitmix64(s);
}

/// mt19937_64 with hand-rolled variate transforms so that draws are
/// bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Exponential with the given rate; never evaluates log(0).
    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    std::uint64_t next_u64() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

}  // namespace stpp
