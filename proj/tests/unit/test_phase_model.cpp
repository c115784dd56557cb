#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace phaseloc;

TEST(ModelPhase, HalfWavelengthMultipleGivesPi)
{
    Band b = fixtures::make_band(1, 10.25e9, 400e6, {Vec3(2.5 * wavelength(10.25e9), 0, 0), Vec3(0, 1, 0), Vec3(0, 2, 0)});
    EXPECT_NEAR(std::abs(model_phase(b, 0, Pose(Vec3::Zero(), 0.0), 0.0, 0.0, 0.0)), kPi, 1e-9);
}

TEST(ModelPhase, ColocatedLeavesOffset)
{
    Band b = fixtures::make_band(1, 10.25e9, 400e6, {Vec3::Zero(), Vec3(0, 1, 0), Vec3(0, 2, 0)});
    EXPECT_NEAR(model_phase(b, 0, Pose(Vec3::Zero(), 0.0), 0.7, 0.0, 0.0), 0.7, 1e-15);
}

TEST(ModelPhase, OneMetreAtFr3)
{
    // 2 pi f / c for f = 10.25 GHz and 1 m, reduced with long double arithmetic.
    const long double turns = 10.25e9L / 299792458.0L;
    const long double frac = turns - std::floor(turns);
    long double expected = 2.0L * 3.14159265358979323846264338327950288L * frac;
    if (expected > 3.14159265358979323846L)
        expected -= 2.0L * 3.14159265358979323846264338327950288L;
    Band b = fixtures::make_band(1, 10.25e9, 400e6, {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 2, 0)});
    const double got = model_phase(b, 0, Pose(Vec3::Zero(), 0.0), 0.0, 0.0, 0.0);
    EXPECT_NEAR(got, static_cast<double>(expected), 1e-9);
    EXPECT_NEAR(kTwoPi * 10.25e9 / kSpeedOfLight, 214.82411475, 1e-8);
}

TEST(PhaseDifferences, Examples)
{
    PhaseObservation o;
    o.phases = {0.4, 0.4, 0.4};
    for (double d : phase_differences(o, 2).deltas)
        EXPECT_EQ(d, 0.0);

    o.phases = {deg2rad(170.0), deg2rad(-170.0)};
    const auto d = phase_differences(o, 1);
    ASSERT_EQ(d.deltas.size(), 1u);
    EXPECT_NEAR(rad2deg(d.deltas[0]), -20.0, 1e-12);
}

TEST(PhaseDifferences, OffsetCancels)
{
    Rng rng = make_rng(2, StreamTag::test);
    for (int i = 0; i < 1000; ++i)
    {
        PhaseObservation a, b;
        const double c = draw_uniform(rng, -kPi, kPi);
        for (int n = 0; n < 4; ++n)
        {
            a.phases.push_back(draw_uniform(rng, -kPi, kPi));
            b.phases.push_back(wrap(a.phases.back() + c));
        }
        const auto da = phase_differences(a, 3), db = phase_differences(b, 3);
        for (std::size_t n = 0; n < 3; ++n)
            ASSERT_NEAR(wrap(da.deltas[n] - db.deltas[n]), 0.0, 1e-12);
    }
}

TEST(PhaseDifferences, ExactOffsetCancellationIsBitwise)
{
    // Before wrapping, a common offset cancels bit for bit.
    PhaseObservation a, b;
    a.phases = {1.0, 2.0, -0.5, 0.25};
    b.phases = a.phases;
    for (auto& p : b.phases)
        p += 0.5;
    const auto da = phase_differences(a, 3), db = phase_differences(b, 3);
    for (std::size_t n = 0; n < 3; ++n)
        EXPECT_EQ(da.deltas[n], db.deltas[n]);
}

TEST(SimulateObservation, NoiselessMatchesModel)
{
    const Scene s = fixtures::two_band_scene(0.0);
    Rng rng = make_rng(6, StreamTag::test);
    const Pose pose(s.on_plane(0.13, 0.27), 0.4);
    const auto obs = simulate_observation(s, pose, rng);
    ASSERT_EQ(obs.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k)
    {
        const Band& b = s.bands[k];
        PhaseObservation m;
        for (std::size_t n = 0; n < b.anchor_count(); ++n)
            m.phases.push_back(model_phase(b, n, pose, 0.0, 0.0, 0.0));
        const auto d1 = phase_differences(obs[k], b), d2 = phase_differences(m, b);
        for (std::size_t n = 0; n < d1.deltas.size(); ++n)
            EXPECT_NEAR(wrap(d1.deltas[n] - d2.deltas[n]), 0.0, 1e-9);
    }
}

TEST(SimulateObservation, DifferenceNoiseIsSqrt2Sigma)
{
    const Scene s = fixtures::two_band_scene(5.0);
    Rng rng = make_rng(7, StreamTag::test);
    const Pose pose(s.on_plane(0.2, 0.1), 0.0);
    const auto clean = differences_for(s, simulate_observation(fixtures::two_band_scene(0.0), pose, rng));
    double sum = 0.0, sum2 = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
    {
        const auto d = differences_for(s, simulate_observation(s, pose, rng));
        const double e = wrap(d[1].deltas[0] - clean[1].deltas[0]);
        sum += e;
        sum2 += e * e;
    }
    const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    EXPECT_NEAR(sd, std::sqrt(2.0) * deg2rad(5.0), 0.1 * std::sqrt(2.0) * deg2rad(5.0));
}

TEST(SimulateObservation, RawPhasesChangeButDifferencesDoNot)
{
    const Scene s = fixtures::two_band_scene(0.0);
    Rng rng = make_rng(9, StreamTag::test);
    const Pose pose(s.on_plane(0.3, 0.3), 1.0);
    const auto a = simulate_observation(s, pose, rng);
    const auto b = simulate_observation(s, pose, rng);
    EXPECT_NE(a[0].phases[0], b[0].phases[0]);
    const auto da = differences_for(s, a), db = differences_for(s, b);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t n = 0; n < da[k].deltas.size(); ++n)
            EXPECT_NEAR(wrap(da[k].deltas[n] - db[k].deltas[n]), 0.0, 1e-9);
}

TEST(SimulateObservation, CirPathMatchesClosedFormWithoutReflectors)
{
    Scene s = fixtures::two_band_scene(0.0);
    Scene c = s;
    c.channel_model = ChannelModel::cir;
    Rng r1 = make_rng(10, StreamTag::test), r2 = make_rng(10, StreamTag::test);
    const Pose pose(s.on_plane(0.05, 0.35), -2.0);
    const auto a = differences_for(s, simulate_observation(s, pose, r1));
    const auto b = differences_for(c, simulate_observation(c, pose, r2));
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t n = 0; n < a[k].deltas.size(); ++n)
            EXPECT_NEAR(wrap(a[k].deltas[n] - b[k].deltas[n]), 0.0, deg2rad(0.5));
}

TEST(SimulateObservation, ImpairmentsMatchExactCorrection)
{
    Scene s = fixtures::two_band_scene(0.0);
    s.bands[1].cable_phase = {0.3, -1.0, 2.0, 0.1};
    s.bands[1].anchor_errors = {Vec3(0.002, 0, 0), Vec3(0, -0.003, 0), Vec3(0, 0, 0.001), Vec3(0.001, 0.001, 0)};
    s.bands[1].bias_terms = {{0, 0.8, Vec2(5.0, -3.0), 0.2}};
    Rng rng = make_rng(11, StreamTag::test);
    const Pose pose(s.on_plane(0.21, 0.17), 0.0);
    const auto d = differences_for(s, simulate_observation(s, pose, rng));
    const ExactCorrection exact;
    const Band& b = s.bands[1];
    const auto pairs = b.pair_anchors();
    for (std::size_t p = 0; p < pairs.size(); ++p)
    {
        const double model = geometric_difference(b, pairs[p], pose.position) + exact.pair_correction(b, p, pose.position, nullptr);
        EXPECT_NEAR(wrap(d[1].deltas[p] - model), 0.0, 1e-9);
    }
}
