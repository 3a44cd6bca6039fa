#pragma once

#include <cmath>
#include <cstdint>

namespace maunet {

// Deterministic splittable RNG. The stream is SplitMix64 (Steele et al.),
// chosen because its output is a pure function of 64-bit integer arithmetic
// and therefore bit-identical on every platform. Substreams are derived by
// hashing (seed, stream tag) so that e.g. weight init and shuffling never
// consume from the same sequence.
class RngState {
  public:
    // Well-known purposes; split() also accepts arbitrary tags (epoch numbers etc.).
    enum Stream : std::uint64_t {
        kInit = 1,
        kData = 2,
        kShuffle = 3,
    };

    explicit RngState(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller. std::normal_distribution is
    // implementation-defined, so it is not used anywhere in this project.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        // u1 == 0 would take log(0); nudge to the smallest representable step.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Integer in [0, n), n >= 1. Uses rejection-free scaled 64-bit draw; the
    // tiny modulo bias is irrelevant for shuffling/test sampling and keeps the
    // call sequence fixed (one draw per value).
    std::uint64_t next_below(std::uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }

    // Derive an independent substream. Children of distinct tags (or of
    // distinct parents) never collide in practice.
    RngState split(std::uint64_t stream_tag) const {
        RngState child(0);
        child.state_ = mix(mix(state_ + 0xbf58476d1ce4e5b9ull) ^ (stream_tag * 0x94d049bb133111ebull));
        return child;
    }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
};

}  // namespace maunet
