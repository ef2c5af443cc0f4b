#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace rsoc {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A draw is a
/// pure function of (key, counter), which is what makes path simulation
/// independent of how paths are distributed over workers.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;

    explicit constexpr Philox4x32(std::uint64_t seed) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    [[nodiscard]] constexpr Counter operator()(Counter ctr) const noexcept {
        std::array<std::uint32_t, 2> key = key_;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    std::array<std::uint32_t, 2> key_;
};

/// Independent random streams. The tag goes in the top counter word so
/// Brownian increments, probe samples and bootstrap draws never overlap.
enum class Stream : std::uint32_t { brownian = 0, probe = 1, bootstrap = 2 };

namespace detail {

// 53-bit uniform in the open interval (0, 1).
constexpr double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Two uniforms in (0,1) addressed by (stream, a, b, c).
inline std::pair<double, double> uniform_pair(std::uint64_t seed, Stream stream, std::uint32_t a, std::uint32_t b,
                                              std::uint32_t c) noexcept {
    const auto out = Philox4x32(seed)({a, b, c, static_cast<std::uint32_t>(stream)});
    return {detail::to_open_unit(out[0], out[1]), detail::to_open_unit(out[2], out[3])};
}

/// Two independent standard normals (Box-Muller) addressed by (stream, a, b, c).
inline std::pair<double, double> normal_pair(std::uint64_t seed, Stream stream, std::uint32_t a, std::uint32_t b,
                                             std::uint32_t c) noexcept {
    const auto [u1, u2] = uniform_pair(seed, stream, a, b, c);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

}  // namespace rsoc
