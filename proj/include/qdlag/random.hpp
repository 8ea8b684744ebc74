#pragma once

#include <cstdint>
#include <random>

namespace qdlag {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent streams drawn from one master seed.
enum class Stream : std::uint64_t {
    ModeTies = 1,
    Folds = 2,
    Bootstrap = 3,
    SimCoefficients = 4,
    SimCovariateCoefficients = 5,
    SimReplicate = 6,
    Split = 7,
};

/// Counter-based child seed: the same (master, stream, index) always gives
/// the same value regardless of the order in which tasks run.
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0)
{
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    return splitmix64(h ^ index);
}

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index = 0)
{
    return Rng(derive_seed(master, stream, index));
}

} // namespace qdlag
