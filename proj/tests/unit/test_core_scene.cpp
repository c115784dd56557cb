#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace phaseloc;
using fixtures::scenario;

TEST(Wrap, Examples)
{
    EXPECT_NEAR(wrap(3.0 * kPi), kPi, 1e-12);
    EXPECT_EQ(wrap(-kPi), kPi);
    EXPECT_NEAR(wrap(7.5), 7.5 - kTwoPi, 1e-15);
    EXPECT_NEAR(wrap(7.5), 1.2168146928204138, 1e-12);
}

TEST(Wrap, RangeIdempotenceAndOddness)
{
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(-1e4, 1e4);
    for (int i = 0; i < 20000; ++i)
    {
        const double x = u(gen);
        const double w = wrap(x);
        ASSERT_GT(w, -kPi);
        ASSERT_LE(w, kPi);
        ASSERT_EQ(wrap(w), w);
        // congruent mod 2 pi
        const double k = (x - w) / kTwoPi;
        ASSERT_NEAR(k, std::round(k), 1e-9);
        if (w != kPi)
        {
            ASSERT_NEAR(wrap(-x), -w, 1e-12);
        }
    }
}

TEST(Rng, StreamsAreDeterministicAndDistinct)
{
    Rng a = make_rng(42, StreamTag::trial, 7);
    Rng b = make_rng(42, StreamTag::trial, 7);
    Rng c = make_rng(42, StreamTag::trial, 8);
    Rng d = make_rng(42, StreamTag::calibration, 7);
    const auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
    EXPECT_NE(va, d());
}

TEST(Rng, ZeroSigmaDoesNotConsume)
{
    Rng a = make_rng(1, StreamTag::test);
    Rng b = make_rng(1, StreamTag::test);
    EXPECT_EQ(draw_normal(a, 0.0), 0.0);
    EXPECT_EQ(a(), b());
}

TEST(Scene, MinimalScenarioLoads)
{
    const Scene s = load_scene(scenario("minimal.json"));
    ASSERT_EQ(s.band_count(), 2u);
    EXPECT_EQ(s.band(1).index, 1u);
    EXPECT_EQ(s.band(2).index, 2u);
    EXPECT_LT(s.band(1).frequency_hz, s.band(2).frequency_hz);
    EXPECT_EQ(s.band(1).reference_index, 3u); // last anchor by default
    EXPECT_TRUE(s.planar);
    EXPECT_NEAR(s.band(1).phase_noise_sigma, deg2rad(3.0), 1e-15);
}

TEST(Scene, GantryScenarioAccepted)
{
    const Scene s = load_scene(scenario("gantry.json"));
    ASSERT_EQ(s.band_count(), 2u);
    EXPECT_DOUBLE_EQ(s.band(1).frequency_hz, 3.25e9);
    EXPECT_DOUBLE_EQ(s.band(2).frequency_hz, 10.25e9);
    EXPECT_EQ(s.band(1).anchor_count(), 4u);
    EXPECT_EQ(s.band(2).anchor_count(), 4u);
    EXPECT_DOUBLE_EQ(s.area.x_m, 1.2);
    // Numerology: 47.88 MHz at 30 kHz and 400.32 MHz at 240 kHz.
    EXPECT_EQ(s.band(1).subcarrier_count(), 1596u);
    EXPECT_EQ(s.band(2).subcarrier_count(), 1668u);
}

TEST(Scene, ThreeAnchorsIn3DRejected)
{
    try
    {
        load_scene(scenario("invalid_3d_three_anchors.json"));
        FAIL() << "expected a validation error";
    }
    catch (const ValidationError& e)
    {
        EXPECT_NE(std::string(e.what()).find("at least 4 anchors"), std::string::npos) << e.what();
    }
}

TEST(Scene, MissingFileNamesPath)
{
    try
    {
        load_scene("/nonexistent/dir/scene.json");
        FAIL();
    }
    catch (const ValidationError& e)
    {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/scene.json"), std::string::npos);
    }
}

TEST(Scene, MalformedFileIsParseError)
{
    const std::string path = testing::TempDir() + "bad_scene.json";
    std::ofstream(path) << "{ \"bands\": [ { \"f_hz\": ";
    EXPECT_THROW(load_scene(path), ParseError);
}

TEST(Scene, InvariantViolationsNamed)
{
    auto expect_message = [](const std::vector<std::string>& overrides, const std::string& needle) {
        try
        {
            load_scene(scenario("minimal.json"), overrides);
            ADD_FAILURE() << "no error for " << needle;
        }
        catch (const ValidationError& e)
        {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_message({"bands.0.f_hz=20e9"}, "ascending");
    expect_message({"bands.0.bandwidth_hz=4e9"}, "below the carrier");
    expect_message({"bands.1.tx_offset_m=[0.05,0,0]"}, "highest band");
    expect_message({"bands.0.anchors_m.1=[-0.3,-0.3,0.5]"}, "closer than 1 mm");
    expect_message({"area.x_m=0"}, "area");
    expect_message({"reflectors=[{\"point_m\":[1,0,0],\"normal\":[1,0,0],\"inv_alpha\":1.5}]"}, "inv_alpha");
    expect_message({"reflectors=[{\"point_m\":[1,0,0],\"normal\":[2,0,0],\"inv_alpha\":0.5}]"}, "unit length");
}

TEST(Scene, OverridesTakePrecedence)
{
    const Scene s = load_scene(scenario("minimal.json"), {"noise.sigma_deg=[1, 2]", "seed=99", "bands.1.reference_index=0"});
    EXPECT_NEAR(s.band(1).phase_noise_sigma, deg2rad(1.0), 1e-15);
    EXPECT_NEAR(s.band(2).phase_noise_sigma, deg2rad(2.0), 1e-15);
    EXPECT_EQ(s.seed, 99u);
    EXPECT_EQ(s.band(2).reference_index, 0u);
}

TEST(Scene, MillimetreUnitsConverted)
{
    const Scene s = load_scene(scenario("minimal.json"), {"units=mm", "area.x_m=400", "area.y_m=400",
                                                          "bands.0.anchors_m=[[-300,-300,500],[700,-300,600],[700,700,700],[-300,700,800]]",
                                                          "bands.1.anchors_m=[[-300,-300,200],[700,-300,250],[700,700,300],[-300,700,350]]"});
    EXPECT_NEAR(s.area.x_m, 0.4, 1e-15);
    EXPECT_NEAR(s.band(1).anchors[2].z(), 0.7, 1e-15);
}

TEST(TxAntenna, Examples)
{
    Band b;
    b.tx_offset = Vec3(0.05, 0.0, 0.0);
    const Vec3 a = tx_antenna_position(Pose(Vec3::Zero(), 0.0), b);
    EXPECT_NEAR((a - Vec3(0.05, 0, 0)).norm(), 0.0, 1e-15);
    const Vec3 h = tx_antenna_position(Pose(Vec3::Zero(), kPi), b);
    EXPECT_NEAR((h - Vec3(-0.05, 0, 0)).norm(), 0.0, 1e-15);
    // Rotation-matrix oracle: R(pi/2) (0.05, 0) = (0, 0.05).
    const Vec3 q = tx_antenna_position(Pose(Vec3(1, 1, 0), kPi / 2), b);
    EXPECT_NEAR(q.x(), 1.0, 1e-15);
    EXPECT_NEAR(q.y(), 1.05, 1e-15);
    EXPECT_NEAR(q.z(), 0.0, 1e-15);
}

TEST(TxAntenna, PreservesOffsetLengthAndHighestBandIsExact)
{
    const Scene s = load_scene(scenario("gantry.json"));
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int i = 0; i < 1000; ++i)
    {
        const Pose p(Vec3(u(gen), u(gen), u(gen)), u(gen));
        const double len = s.band(1).tx_offset.norm();
        EXPECT_NEAR((tx_antenna_position(p, s.band(1)) - p.position).norm(), len, 1e-12 * std::max(1.0, len));
        EXPECT_EQ(tx_antenna_position(p, s.band(2)), p.position);
    }
}

TEST(Pose, HeadingWrapped)
{
    EXPECT_EQ(Pose(Vec3::Zero(), -kPi).heading, kPi);
    EXPECT_NEAR(Pose(Vec3::Zero(), 5.0 * kPi / 2).heading, kPi / 2, 1e-12);
}
