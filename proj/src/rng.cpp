#include "dflab/rng.hpp"

#include <cmath>
#include <numbers>

namespace dflab {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

static std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master;
    std::uint64_t a = splitmix64(s);
    s ^= stream * 0xda942042e4dd58b5ULL;
    std::uint64_t b = splitmix64(s);
    return a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
}

RNGStream::RNGStream(std::uint64_t master_seed, std::uint64_t stream_id)
    : master_(master_seed), stream_(stream_id), eng_(mix_seed(master_seed, stream_id)) {}

std::uint64_t RNGStream::bits() { return eng_(); }

double RNGStream::uniform01() {
    return static_cast<double>(bits() >> 11) * 0x1.0p-53;
}

double RNGStream::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    // u1 in (0,1] keeps the log finite.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 2.0 * std::numbers::pi * u2;
    cached_normal_ = rad * std::sin(ang);
    has_cached_ = true;
    return rad * std::cos(ang);
}

RNGStream RNGStream::substream(std::uint64_t child_id) const {
    std::uint64_t s = stream_;
    std::uint64_t folded = splitmix64(s) ^ (child_id * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    return RNGStream(master_, folded);
}

}  // namespace dflab
