#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>

namespace keyperm {

// Portable random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard. Everything layered on top of it
// (uniform doubles, bounded integers, Gaussian draws, shuffles) is
// implemented here rather than through <random> distributions, whose
// algorithms are implementation-defined.
//
//   uniform()  = (next() >> 11) * 2^-53                      in [0, 1)
//   normal()   = Box-Muller on u1 = 1 - uniform(), u2 = uniform():
//                r = sqrt(-2 ln u1); emits r cos(2 pi u2), then r sin(2 pi u2)
//   below(n)   = rejection sampling on next() with threshold 2^64 mod n
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform();
    double normal();
    std::uint64_t below(std::uint64_t bound);

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

// Fisher-Yates, iterating from the back.
void shuffle(std::span<std::size_t> items, Rng& rng);

// SplitMix64 finaliser of (base, stream): independent child seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace keyperm
