// SPDX-License-Identifier: Apache-2.0
//
// Common numeric types, angle helpers and error types shared by all modules.

#ifndef PHASELOC_CORE_HPP
#define PHASELOC_CORE_HPP

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace phaseloc
{
    using Vec2 = Eigen::Vector2d;
    using Vec3 = Eigen::Vector3d;

    inline constexpr double kPi = std::numbers::pi;
    inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

    // Exact SI value.
    inline constexpr double kSpeedOfLight = 299'792'458.0;

    constexpr double deg2rad(double deg) noexcept { return deg * kPi / 180.0; }
    constexpr double rad2deg(double rad) noexcept { return rad * 180.0 / kPi; }

    inline double wavelength(double frequency_hz) noexcept { return kSpeedOfLight / frequency_hz; }

    /// Wraps an angle into (-pi, pi].
    inline double wrap(double angle) noexcept
    {
        double r = std::remainder(angle, kTwoPi); // [-pi, pi]
        if (r <= -kPi)
            r += kTwoPi;
        return r;
    }

    // Errors. Validation errors map to CLI exit code 1, everything else to 2.

    class ValidationError : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    class ParseError : public ValidationError
    {
    public:
        using ValidationError::ValidationError;
    };

    class NoPeakError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    class AmbiguityError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    class DegenerateGeometryError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    class InsufficientDataError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };
} // namespace phaseloc

#endif // PHASELOC_CORE_HPP
