#pragma once

#include <cstdint>

namespace loclab {

/// SplitMix64 (Steele, Lea, Flood 2014). The stream is fully specified, so seeded
/// instances are bit-identical on every platform and standard library.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform on (0, 1].
    double uniform_positive() { return 1.0 - uniform(); }

    /// Uniform integer in [0, bound). Multiply-shift; bias is below 2^-32 for the bounds used here.
    std::uint64_t below(std::uint64_t bound) {
        __extension__ using u128 = unsigned __int128;
        return static_cast<std::uint64_t>((static_cast<u128>(next()) * bound) >> 64);
    }

private:
    std::uint64_t state_;
};

} // namespace loclab
