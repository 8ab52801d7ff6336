#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "vitsvm/errors.hpp"

namespace vitsvm {

// splitmix64 finalizer; derives independent stream seeds from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt = 0)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seeded random source with draws defined bit-for-bit by this header.
///
/// The standard distributions are implementation-defined, so uniform and
/// normal variates are derived here from raw 64-bit engine output. The
/// engine state serializes to text for checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n) by rejection, n >= 1.
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    // Box-Muller; one variate per call so the stream position stays simple.
    double normal()
    {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Normal(0, stddev) redrawn until inside two standard deviations.
    double truncated_normal(double stddev)
    {
        double z;
        do {
            z = normal();
        } while (std::abs(z) > 2.0);
        return z * stddev;
    }

    std::string state() const
    {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& text)
    {
        std::istringstream is(text);
        std::mt19937_64 engine;
        is >> engine;
        if (is.fail()) throw ParseError("malformed RNG state");
        engine_ = engine;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

// Fisher-Yates shuffle driven by Rng::below.
template <class Range>
void shuffle(Range& range, Rng& rng)
{
    const auto n = static_cast<std::uint64_t>(std::size(range));
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        using std::swap;
        swap(range[i - 1], range[j]);
    }
}

}  // namespace vitsvm
