// SPDX-License-Identifier: Apache-2.0
//
// Random streams. Every random draw in the library comes from an Rng that was
// derived from a single 64-bit master seed:
//
//     stream_seed(master, tag, index) = splitmix64(master ^ splitmix64(tag ^ splitmix64(index)))
//
// `tag` separates independent consumers (trial simulation, calibration runs,
// baseline sensors, ...) and `index` is the trial or step number. Streams are
// therefore independent of scheduling and thread count.

#ifndef PHASELOC_RNG_HPP
#define PHASELOC_RNG_HPP

#include <cstdint>
#include <random>

namespace phaseloc
{
    using Rng = std::mt19937_64;

    constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    enum class StreamTag : std::uint64_t
    {
        trial = 1,
        calibration = 2,
        baseline = 3,
        tdoa_calibration = 4,
        cli = 5,
        tracking = 6,
        test = 99,
    };

    constexpr std::uint64_t stream_seed(std::uint64_t master, StreamTag tag, std::uint64_t index) noexcept
    {
        return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(tag) ^ splitmix64(index)));
    }

    inline Rng make_rng(std::uint64_t master, StreamTag tag, std::uint64_t index = 0)
    {
        return Rng{stream_seed(master, tag, index)};
    }

    inline double draw_normal(Rng& rng, double sigma)
    {
        if (sigma <= 0.0)
            return 0.0;
        return std::normal_distribution<double>{0.0, sigma}(rng);
    }

    inline double draw_uniform(Rng& rng, double lo, double hi)
    {
        return std::uniform_real_distribution<double>{lo, hi}(rng);
    }
} // namespace phaseloc

#endif // PHASELOC_RNG_HPP
