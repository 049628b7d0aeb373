#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace aslperf {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Folds a seed and a tuple of counters into a single stream key.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept {
    std::uint64_t key = mix64(seed);
    for (std::uint64_t id : ids) key = mix64(key ^ mix64(id + 0x632be59bd9b4e019ULL));
    return key;
}

/// Counter-based random stream: the n-th draw depends only on (key, n), so
/// generation keyed by voxel/PLD/repeat is independent of evaluation order.
class RandomStream {
public:
    explicit constexpr RandomStream(std::uint64_t key) noexcept : key_(key) {}
    RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept
        : key_(stream_key(seed, ids)) {}

    constexpr std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Fisher-Yates with a RandomStream, portable across standard libraries.
template <typename Vec>
void shuffle_in_place(Vec& items, RandomStream& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace aslperf
