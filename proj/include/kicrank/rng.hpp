#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kicrank {

/// Seeded generator with platform-independent draws.
///
/// std::uniform_int_distribution is implementation-defined, so bounded draws
/// are done by rejection on the raw 64-bit engine output instead. Named
/// substreams let each consumer (training, ordering, shuffles) own an
/// independent sequence derived from one run seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound);

    /// Uniform double in [0, 1).
    double uniform_real() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

    bool coin() { return (engine_() >> 63) != 0; }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = uniform_index(i);
            std::iter_swap(first + (i - 1), first + j);
        }
    }

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name, std::uint64_t index);

}  // namespace kicrank
