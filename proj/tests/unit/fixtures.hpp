// Small hand-built scenes shared by the unit tests.

#ifndef PHASELOC_TEST_FIXTURES_HPP
#define PHASELOC_TEST_FIXTURES_HPP

#include <string>
#include <vector>

#include <phaseloc/phaseloc.hpp>

namespace fixtures
{
    using namespace phaseloc;

    inline std::string scenario(const std::string& name) { return std::string(PHASELOC_SCENARIO_DIR) + "/" + name; }

    inline Band make_band(std::size_t index, double f, double bw, std::vector<Vec3> anchors,
                          Vec3 tx_offset = Vec3::Zero())
    {
        Band b;
        b.index = index;
        b.frequency_hz = f;
        b.bandwidth_hz = bw;
        b.subcarrier_spacing_hz = bw / 1024.0;
        b.anchors = std::move(anchors);
        b.reference_index = b.anchors.size() - 1;
        b.tx_offset = tx_offset;
        return b;
    }

    inline std::vector<Vec3> corners(double lo, double hi, std::vector<double> z)
    {
        return {Vec3(lo, lo, z[0]), Vec3(hi, lo, z[1]), Vec3(hi, hi, z[2]), Vec3(lo, hi, z[3])};
    }

    /// 0.4 m x 0.4 m planar area, FR1-like and FR3-like bands with four anchors each.
    inline Scene two_band_scene(double sigma_deg = 0.0)
    {
        Scene s;
        s.area.x_m = 0.4;
        s.area.y_m = 0.4;
        s.bands.push_back(make_band(1, 3.25e9, 47.88e6, corners(-0.3, 0.7, {0.5, 0.6, 0.7, 0.8})));
        s.bands.push_back(make_band(2, 10.25e9, 400.32e6, corners(-0.3, 0.7, {0.2, 0.25, 0.3, 0.35})));
        s.bands[0].subcarrier_spacing_hz = 30e3;
        s.bands[1].subcarrier_spacing_hz = 240e3;
        for (auto& b : s.bands)
            b.phase_noise_sigma = deg2rad(sigma_deg);
        validate(s);
        return s;
    }

    inline Scene single_band_scene(double f = 10.25e9)
    {
        Scene s;
        s.area.x_m = 0.4;
        s.area.y_m = 0.4;
        s.bands.push_back(make_band(1, f, 400.32e6, corners(-0.3, 0.7, {0.2, 0.25, 0.3, 0.35})));
        validate(s);
        return s;
    }
} // namespace fixtures

#endif
