#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace foqus {

using Rng = std::mt19937_64;

/// One step of the splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a sequence of words into one seed. Order matters; every word passes
/// through the mixer so neighbouring tuples land far apart.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words) noexcept;

/// Stable 64-bit tag for a short string (method names etc.).
std::uint64_t string_tag(std::string_view s) noexcept;

/// Uniform integer in [0, n). n must be > 0.
std::size_t uniform_index(Rng& rng, std::size_t n);

double uniform_unit(Rng& rng);

}  // namespace foqus
