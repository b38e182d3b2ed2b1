#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace polysed {

/// Deterministic random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. All conversions to real/integer ranges are done here rather than
/// through <random> distributions, which are implementation-defined, so one
/// seed yields the same stream with every standard library.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (one draw per call).
    double normal();

    template <class T>
    void shuffle(std::span<T> items) {
        // Fisher-Yates, back to front.
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Independent generator for a named sub-stream of this seed.
    SeededRng fork(std::string_view stream) const { return SeededRng(derive_seed(seed_, stream)); }

    static std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace polysed
