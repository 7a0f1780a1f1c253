#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace mfc {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based normal generator. Every (particle, step, action) triple owns
/// an independent stream, so draws never depend on evaluation order or on how
/// particles are split across workers.
class CounterNormal {
  public:
    explicit CounterNormal(std::uint64_t seed) noexcept : key_(mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

    double operator()(std::uint64_t particle, std::uint64_t step, std::uint64_t action) const noexcept {
        std::uint64_t h = mix64(key_ ^ particle);
        h = mix64(h ^ (step * 0xD1B54A32D192ED03ULL));
        h = mix64(h ^ (action * 0x8CB92BA72F3D8DD7ULL));
        const std::uint64_t h2 = mix64(h ^ 0xA0761D6478BD642FULL);
        // u1 in (0,1], u2 in [0,1)
        const double u1 = static_cast<double>((h >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const noexcept { return key_; }

  private:
    std::uint64_t key_;
};

/// Derives a named substream seed from a master seed (FNV-1a over the name).
constexpr std::uint64_t substream_seed(std::uint64_t master, std::string_view name) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return mix64(master ^ h);
}

}  // namespace mfc
