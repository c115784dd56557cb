#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace phaseloc;

TEST(Ambiguity, Examples)
{
    const auto a = resolve_ambiguity_1d(1.30, 0.04, 0.10, 0.3 * kTwoPi);
    EXPECT_EQ(a.k, 13);
    EXPECT_NEAR(a.range, 1.33, 1e-12);

    const auto b = resolve_ambiguity_1d(1.33, 0.004, 0.01, 0.8 * kTwoPi);
    EXPECT_EQ(b.k, 132);
    EXPECT_NEAR(b.range, 1.328, 1e-12);

    EXPECT_THROW(resolve_ambiguity_1d(1.30, 0.06, 0.10, 0.0), AmbiguityError);
    EXPECT_THROW(resolve_ambiguity_1d(1.30, 0.01, 0.0, 0.0), ValidationError);
}

TEST(Ambiguity, RecoversTrueRangeInsideHalfWavelength)
{
    Rng rng = make_rng(1, StreamTag::test);
    for (int i = 0; i < 2000; ++i)
    {
        const double lambda = draw_uniform(rng, 0.005, 0.2);
        const double d = draw_uniform(rng, 0.1, 10.0);
        const double phi = wrap(kTwoPi * d / lambda);
        const double unc = 0.45 * lambda;
        const double initial = d + draw_uniform(rng, -0.4 * lambda, 0.4 * lambda);
        const auto r = resolve_ambiguity_1d(initial, unc, lambda, phi);
        ASSERT_NEAR(r.range, d, 1e-9 * d);
    }
}

TEST(NearestPeak, TiesAndEmpty)
{
    std::vector<Peak> peaks = {{Vec3(1, 0, 0), -3.0}, {Vec3(-1, 0, 0), -2.0}, {Vec3(0, 2, 0), 0.0}};
    EXPECT_EQ(nearest_peak(peaks, Vec3::Zero()), 1u); // equal distance, higher value
    peaks[1].value = -3.0;
    EXPECT_EQ(nearest_peak(peaks, Vec3::Zero()), 1u); // equal value, lexicographically first
    EXPECT_EQ(nearest_peak(peaks, Vec3(0, 1.9, 0)), 2u);
    EXPECT_THROW(nearest_peak({}, Vec3::Zero()), NoPeakError);
}

namespace
{
    double final_error(const Scene& s, const Pose& truth, const Vec3& initial, Rng& rng)
    {
        const auto obs = differences_for(s, simulate_observation(s, truth, rng));
        const auto r = refine(s, obs, truth.heading, initial, nullptr);
        return (r.estimates.back() - truth.position).norm();
    }
} // namespace

TEST(Refine, NoiselessFromTruthStaysPut)
{
    const Scene s = fixtures::two_band_scene(0.0);
    Rng rng = make_rng(2, StreamTag::test);
    for (int i = 0; i < 5; ++i)
    {
        const Pose truth(s.on_plane(draw_uniform(rng, 0, 0.4), draw_uniform(rng, 0, 0.4)), draw_uniform(rng, -kPi, kPi));
        const auto obs = differences_for(s, simulate_observation(s, truth, rng));
        const auto r = refine(s, obs, truth.heading, truth.position, nullptr);
        ASSERT_EQ(r.estimates.size(), 3u);
        ASSERT_EQ(r.stages.size(), 2u);
        for (std::size_t k = 1; k < r.estimates.size(); ++k)
            EXPECT_LT((r.estimates[k] - truth.position).norm(), 1e-5);
    }
}

TEST(Refine, SmallInitialErrorIsRemoved)
{
    const Scene s = fixtures::two_band_scene(2.0);
    Rng rng = make_rng(3, StreamTag::test);
    for (int i = 0; i < 10; ++i)
    {
        const Pose truth(s.on_plane(draw_uniform(rng, 0.05, 0.35), draw_uniform(rng, 0.05, 0.35)), 0.0);
        const Vec3 initial = synth_initial_estimate(truth.position, 0.010, rng);
        EXPECT_LT(final_error(s, truth, initial, rng), 0.002);
    }
}

TEST(Refine, OneFr1SpacingOffLocksOntoWrongPeak)
{
    const Scene s = fixtures::two_band_scene(0.0);
    Rng rng = make_rng(4, StreamTag::test);
    const Pose truth(s.on_plane(0.2, 0.2), 0.0);
    const double spacing = peak_spacing_estimate(s.bands[0], truth.position, true);
    int wrong = 0;
    for (double ang = 0.0; ang < kTwoPi; ang += kTwoPi / 8)
    {
        const Vec3 initial = truth.position + 1.5 * spacing * Vec3(std::cos(ang), std::sin(ang), 0.0);
        if (final_error(s, truth, initial, rng) > 0.01)
            ++wrong;
    }
    EXPECT_GE(wrong, 6);
}

TEST(Refine, Deterministic)
{
    const Scene s = fixtures::two_band_scene(5.0);
    Rng a = make_rng(5, StreamTag::test), b = make_rng(5, StreamTag::test);
    const Pose truth(s.on_plane(0.1, 0.3), 0.5);
    const Vec3 init = truth.position + Vec3(0.004, -0.003, 0);
    const auto oa = differences_for(s, simulate_observation(s, truth, a));
    const auto ob = differences_for(s, simulate_observation(s, truth, b));
    const auto ra = refine(s, oa, truth.heading, init, nullptr);
    const auto rb = refine(s, ob, truth.heading, init, nullptr);
    for (std::size_t k = 0; k < ra.estimates.size(); ++k)
        EXPECT_EQ(ra.estimates[k], rb.estimates[k]);
}

TEST(Refine, RejectsBadInput)
{
    const Scene s = fixtures::two_band_scene(0.0);
    Rng rng = make_rng(6, StreamTag::test);
    const Pose truth(s.on_plane(0.1, 0.3), 0.0);
    auto obs = differences_for(s, simulate_observation(s, truth, rng));
    EXPECT_THROW(refine(s, {obs[0]}, 0.0, truth.position, nullptr), ValidationError);
    EXPECT_THROW(refine(s, obs, 0.0, Vec3(NAN, 0, 0), nullptr), ValidationError);
    std::swap(obs[0], obs[1]);
    EXPECT_THROW(refine(s, obs, 0.0, truth.position, nullptr), ValidationError);
}

TEST(Refine, ExactCorrectionUndoesImpairments)
{
    Scene s = fixtures::two_band_scene(0.0);
    s.bands[1].cable_phase = {0.3, -1.0, 2.0, 0.1};
    s.bands[0].cable_phase = {1.3, 0.4, -2.5, 0.0};
    s.bands[1].anchor_errors = {Vec3(0.002, 0, 0), Vec3(0, -0.003, 0), Vec3(0, 0, 0.001), Vec3(0.001, 0.001, 0)};
    Rng rng = make_rng(7, StreamTag::test);
    const ExactCorrection exact;
    for (int i = 0; i < 5; ++i)
    {
        const Pose truth(s.on_plane(draw_uniform(rng, 0.05, 0.35), draw_uniform(rng, 0.05, 0.35)), 0.0);
        const auto obs = differences_for(s, simulate_observation(s, truth, rng));
        const Vec3 init = synth_initial_estimate(truth.position, 0.005, rng);
        const auto corrected = refine(s, obs, 0.0, init, &exact);
        EXPECT_LT((corrected.estimates.back() - truth.position).norm(), 1e-4);
    }
}
