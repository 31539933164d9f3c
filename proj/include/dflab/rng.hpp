#pragma once

#include <cstdint>
#include <random>

namespace dflab {

// Reproducible random stream addressed by (master_seed, stream_id).
// Distinct stream ids under one master seed give statistically independent
// streams. Variates are derived from raw engine words by fixed bit
// transforms, not std:: distributions, so sequences are byte-stable across
// standard library implementations.
class RNGStream {
  public:
    RNGStream(std::uint64_t master_seed, std::uint64_t stream_id);

    std::uint64_t master_seed() const { return master_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t bits();
    double uniform01();  // [0, 1), 53-bit resolution
    double normal();     // standard Gaussian, Box-Muller pair with cache

    // Child stream for e.g. a Monte Carlo path; mixing is injective enough
    // that (stream_id, child_id) collisions are not a practical concern.
    RNGStream substream(std::uint64_t child_id) const;

  private:
    std::uint64_t master_, stream_;
    std::mt19937_64 eng_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace dflab
