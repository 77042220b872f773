#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace rtsub {

// Counter-based seeding: every stream is a pure function of a master seed and
// a path of integer coordinates, so results never depend on the order in
// which streams are created or consumed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t key = splitmix64(seed);
    for (std::uint64_t coord : path) {
        key = splitmix64(key ^ splitmix64(coord + 0x632BE59BD9B4E019ULL));
    }
    return key;
}

// Domain tags for the first path coordinate.
namespace stream_tag {
inline constexpr std::uint64_t full = 0x66756C6CULL;       // full-data statistics
inline constexpr std::uint64_t tuples = 0x7475706CULL;     // subsample tuples
inline constexpr std::uint64_t entry = 0x656E7472ULL;      // H-matrix entries
inline constexpr std::uint64_t folds = 0x666F6C64ULL;      // cross-fitting folds
inline constexpr std::uint64_t replicate = 0x7265706CULL;  // harness replicates
inline constexpr std::uint64_t calibrate = 0x63616C69ULL;  // reference distributions
}  // namespace stream_tag

// xoshiro256** generator; satisfies UniformRandomBitGenerator.
class Stream {
public:
    using result_type = std::uint64_t;

    explicit Stream(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9E3779B97F4A7C15ULL;
            s = splitmix64(x);
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on the open interval (0,1).
    double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    // Independent child stream; does not advance this one.
    Stream child(std::initializer_list<std::uint64_t> path) const {
        return Stream(derive_seed(state_[0] ^ rotl(state_[2], 13), path));
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
};

inline Stream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    return Stream(derive_seed(seed, path));
}

}  // namespace rtsub
