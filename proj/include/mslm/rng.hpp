#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mslm {

// All randomness in the project flows from one user-facing seed. Each module
// derives its own stream with a name, so adding a consumer never shifts the
// draws of another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    // FNV-1a over the stream name, folded into the seed, then mixed
    // (splitmix64 finalizer) so nearby seeds do not produce nearby states.
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : stream) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::uint64_t z = seed ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t seed, std::string_view stream) : engine_(derive_seed(seed, stream)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1). Mapped from the raw 53 high bits rather than
    // std::uniform_real_distribution, whose output is implementation defined.
    double next_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [-a, a).
    double next_symmetric(double a) { return (2.0 * next_double() - 1.0) * a; }

    // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    // always tiny relative to 2^64, bias is far below any tolerance we test.
    std::uint64_t next_below(std::uint64_t n) { return engine_() % n; }

private:
    std::mt19937_64 engine_;
};

}  // namespace mslm
