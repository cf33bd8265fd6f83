#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace eqloss {

__extension__ using u128 = unsigned __int128;

using Philox4x64Block = std::array<std::uint64_t, 4>;
using Philox4x64Key = std::array<std::uint64_t, 2>;

/** Philox4x64 with 10 rounds (Salmon et al. counter-based generator). */
inline Philox4x64Block philox4x64_10(Philox4x64Block ctr, Philox4x64Key key) {
    constexpr std::uint64_t m0 = 0xD2E7470EE14C6C93ULL;
    constexpr std::uint64_t m1 = 0xCA5A826395121157ULL;
    constexpr std::uint64_t w0 = 0x9E3779B97F4A7C15ULL;
    constexpr std::uint64_t w1 = 0xBB67AE8584CAA73BULL;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += w0;
            key[1] += w1;
        }
        const u128 p0 = static_cast<u128>(m0) * ctr[0];
        const u128 p1 = static_cast<u128>(m1) * ctr[2];
        const auto hi0 = static_cast<std::uint64_t>(p0 >> 64), lo0 = static_cast<std::uint64_t>(p0);
        const auto hi1 = static_cast<std::uint64_t>(p1 >> 64), lo1 = static_cast<std::uint64_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/** Counter-based stream. The key is (seed, stream id); the counter walks blocks of
 *  four 64-bit words. substream(tag) keeps the seed and derives a new stream id as
 *  splitmix64(stream ^ splitmix64(tag)), so substreams of distinct tags never share keys
 *  in practice and never share state with their parent. */
class Rng {
public:
    using result_type = std::uint64_t;
    static constexpr std::string_view name = "philox4x64-10";

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : key_{seed, stream} {}

    Rng substream(std::uint64_t tag) const {
        return Rng(key_[0], splitmix64(key_[1] ^ splitmix64(tag)));
    }

    std::uint64_t seed() const { return key_[0]; }
    std::uint64_t stream() const { return key_[1]; }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (pos_ == 4) {
            block_ = philox4x64_10({counter_, 0, 0, 0}, key_);
            ++counter_;
            pos_ = 0;
        }
        return block_[pos_++];
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1].
    double uniform_pos() { return (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
        const double a = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform on {0, ..., n-1} (Lemire's multiply-shift with rejection).
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        const auto bound = static_cast<std::uint64_t>(n);
        u128 m = static_cast<u128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<u128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::size_t>(m >> 64);
    }

private:
    Philox4x64Key key_;
    std::uint64_t counter_ = 0;
    Philox4x64Block block_{};
    int pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace eqloss
