#pragma once

#include <cmath>
#include <cstdint>

namespace dtg {

// Counter-based deterministic RNG. Streams are derived by hashing the seed
// with stream labels, so independent (patient, sample, time) streams can be
// drawn in any order, including from worker threads, with identical results.
// std:: distributions are implementation-defined and deliberately avoided.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

    Rng(std::uint64_t seed, std::uint64_t s1) : Rng(combine(seed, s1)) {}
    Rng(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2) : Rng(combine(combine(seed, s1), s2)) {}
    Rng(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2, std::uint64_t s3)
        : Rng(combine(combine(combine(seed, s1), s2), s3)) {}

    // Derive an independent child stream without disturbing this one.
    Rng stream(std::uint64_t label) const { return Rng(state_, label); }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (bit-reproducible, caches the pair).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Standard minimum-Gumbel: CDF F(g) = 1 - exp(-e^g). The log of a unit
    // Weibull draw follows this law.
    double gumbel_min() { return std::log(-std::log(uniform_pos())); }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
        return mix(a + kGolden * (b + 1));
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dtg
