#include "foqus/rng.hpp"

namespace foqus {

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words) noexcept
{
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t w : words)
        h = splitmix64(h ^ splitmix64(w + 0x632be59bd9b4e019ULL));
    return h;
}

std::uint64_t string_tag(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

std::size_t uniform_index(Rng& rng, std::size_t n)
{
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng);
}

double uniform_unit(Rng& rng)
{
    // 53 random mantissa bits, [0, 1).
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace foqus
