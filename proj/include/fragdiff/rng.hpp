#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace fragdiff {

// splitmix64 finalizer; used to derive independent child streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

// Seeded generator with platform-independent derived draws (the standard
// distributions are implementation-defined, which would break
// byte-identical reruns across toolchains).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n);
    double normal();
    // index drawn proportionally to non-negative weights
    std::size_t categorical(std::span<const double> weights);

    // Independent child stream keyed by `key`; does not advance this one.
    Rng child(std::uint64_t key) const { return Rng(mix64(seed_, key)); }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fragdiff
