#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace foqus {

/// Incremental FNV-1a (64-bit) over a canonical byte stream. Used to bind
/// artifacts (dataset, trajectories, scores, coresets) to their inputs.
class Digest {
public:
    Digest& bytes(const void* data, std::size_t n) noexcept;
    Digest& u64(std::uint64_t v) noexcept;
    Digest& i64(std::int64_t v) noexcept { return u64(static_cast<std::uint64_t>(v)); }
    Digest& f64(double v) noexcept;
    Digest& str(std::string_view s) noexcept;
    Digest& f64s(std::span<const double> v) noexcept;

    std::uint64_t value() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

}  // namespace foqus
