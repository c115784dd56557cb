#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace phaseloc;

TEST(Encoder, QuantizationSigmaMatchesUniformRounding)
{
    const SensorModel m;
    // pulse = 2 pi 0.1 / 1024 m, sigma = pulse / (sqrt(12) T)
    EXPECT_NEAR(encoder_sigma(m), kTwoPi * 0.1 / 1024.0 / (std::sqrt(12.0) * 0.175), 1e-15);
    Rng rng = make_rng(1, StreamTag::test);
    double s2 = 0.0;
    const int n = 100000;
    const double half = m.pulse_length() / (2.0 * m.period);
    for (int i = 0; i < n; ++i)
    {
        const double v = draw_uniform(rng, 0.0, 0.5);
        const double e = simulate_encoder(v, m) - v;
        ASSERT_LE(std::abs(e), half * (1 + 1e-12));
        s2 += e * e;
    }
    EXPECT_NEAR(std::sqrt(s2 / n), encoder_sigma(m), 0.05 * encoder_sigma(m));
}

TEST(Encoder, ExactMultiplesAndStandstill)
{
    const SensorModel m;
    const double v = 37.0 * m.pulse_length() / m.period;
    EXPECT_NEAR(simulate_encoder(v, m), v, 1e-15);
    EXPECT_EQ(simulate_encoder(0.0, m), 0.0);
    EXPECT_THROW(simulate_encoder(-1.0, m), ValidationError);
}

TEST(Magnetometer, SpreadAndWrap)
{
    Rng rng = make_rng(2, StreamTag::test);
    const double sigma = deg2rad(0.86);
    double s2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i)
    {
        const double h = simulate_magnetometer(kPi - 0.001, sigma, rng);
        ASSERT_GT(h, -kPi);
        ASSERT_LE(h, kPi);
        const double e = wrap(h - (kPi - 0.001));
        s2 += e * e;
    }
    EXPECT_NEAR(std::sqrt(s2 / n), sigma, 0.05 * sigma);
    EXPECT_EQ(simulate_magnetometer(0.3, 0.0, rng), 0.3);
}

namespace
{
    Scene line_scene()
    {
        Scene s;
        s.area.x_m = 1.0;
        s.area.y_m = 1.0;
        s.bands.push_back(fixtures::make_band(1, 3.25e9, 47.88e6,
                                              {Vec3(-1, 0, 0), Vec3(-2, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)}));
        return s;
    }
} // namespace

TEST(Tdoa, SymmetricPointHasZeroDelays)
{
    Scene s;
    s.area.x_m = 1.0;
    s.area.y_m = 1.0;
    s.bands.push_back(fixtures::make_band(1, 3.25e9, 47.88e6, fixtures::corners(0.0, 1.0, {0.5, 0.5, 0.5, 0.5})));
    validate(s);
    Rng rng = make_rng(3, StreamTag::test);
    const auto obs = simulate_tdoa(s, s.bands[0], Pose(s.on_plane(0.5, 0.5), 0.0), rng, 0.0);
    for (double d : obs.delays)
        EXPECT_NEAR(d, 0.0, 1e-18);
}

TEST(Tdoa, NoiselessDelaysAndSolve)
{
    const Scene s = load_scene(fixtures::scenario("gantry.json"));
    const Band& b = s.bands[0];
    Rng rng = make_rng(4, StreamTag::test);
    for (int i = 0; i < 10; ++i)
    {
        const Pose truth(s.on_plane(draw_uniform(rng, 0, 1.2), draw_uniform(rng, 0, 1.2)), draw_uniform(rng, -kPi, kPi));
        const auto obs = simulate_tdoa(s, b, truth, rng, 0.0);
        const Vec3 tx = tx_antenna_position(truth, b);
        const auto pairs = b.pair_anchors();
        for (std::size_t p = 0; p < pairs.size(); ++p)
        {
            const double expected =
                ((b.anchors[pairs[p]] - tx).norm() - (b.anchors[b.reference_index] - tx).norm()) / kSpeedOfLight;
            ASSERT_NEAR(obs.delays[p], expected, 1e-18);
        }
        // Solved for the robot position, with the known antenna offset at heading 0.
        Pose straight = truth;
        straight.heading = 0.0;
        const auto o0 = simulate_tdoa(s, b, straight, rng, 0.0);
        const auto sol = solve_tdoa(s, b, o0, nullptr, s.on_plane(0.0, 0.0));
        EXPECT_TRUE(sol.converged);
        EXPECT_LT((sol.position - truth.position).norm(), 1e-4);
    }
}

TEST(Tdoa, CollinearAnchorsAreDegenerate)
{
    const Scene s = line_scene();
    Rng rng = make_rng(5, StreamTag::test);
    const auto obs = simulate_tdoa(s, s.bands[0], Pose(Vec3(0.2, 0, 0), 0.0), rng, 0.0);
    EXPECT_THROW(solve_tdoa(s, s.bands[0], obs, nullptr, Vec3(0.2, 0, 0)), DegenerateGeometryError);
    TdoaObservation short_obs = obs;
    short_obs.delays.pop_back();
    EXPECT_THROW(solve_tdoa(s, s.bands[0], short_obs, nullptr, Vec3::Zero()), ValidationError);
}

TEST(Kalman, PredictionUsesConstantVelocity)
{
    TrackState s;
    s.x << 0.0, 0.0, 1.0, 0.0;
    s.p.setZero();
    const Eigen::Matrix4d f = constant_velocity_transition(0.2);
    const Eigen::Vector4d x = f * s.x;
    EXPECT_NEAR(x(0), 0.2, 1e-15);
    EXPECT_NEAR(x(1), 0.0, 1e-15);
    // Measurement equal to the prediction leaves the state there.
    KalmanParams kp;
    const auto out = kf_step(s, 0.2, x, kp);
    EXPECT_NEAR((out.x - x).norm(), 0.0, 1e-12);
    EXPECT_NEAR(out.timestamp, 0.2, 1e-15);
    EXPECT_THROW(kf_step(s, 0.0, x, kp), ValidationError);
}

TEST(Kalman, CovarianceStaysSymmetricPositive)
{
    Rng rng = make_rng(6, StreamTag::test);
    KalmanParams kp;
    TrackState s;
    for (int i = 0; i < 100000; ++i)
    {
        Eigen::Vector4d y;
        for (int c = 0; c < 4; ++c)
            y(c) = draw_normal(rng, 1.0);
        s = kf_step(s, draw_uniform(rng, 0.01, 0.3), y, kp);
        if (i % 997 == 0)
        {
            ASSERT_LT((s.p - s.p.transpose()).norm(), 1e-12);
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(s.p);
            ASSERT_GT(es.eigenvalues().minCoeff(), 0.0);
        }
    }
}

TEST(Kalman, NoiselessTrackConverges)
{
    KalmanParams kp;
    kp.sigma_a = 1e-4;
    TrackState s;
    const double dt = 0.1;
    for (int i = 1; i <= 400; ++i)
    {
        const double t = i * dt;
        s = kf_step(s, dt, Eigen::Vector4d(0.3 + 0.05 * t, -0.1 * t, 0.05, -0.1), kp);
    }
    EXPECT_NEAR(s.x(0), 0.3 + 0.05 * 40.0, 1e-3);
    EXPECT_NEAR(s.x(1), -4.0, 1e-3);
    EXPECT_NEAR(s.x(2), 0.05, 1e-3);
}

TEST(Kalman, ErrorMatchesSteadyStateCovariance)
{
    // Truth driven by the same process noise the filter assumes.
    KalmanParams kp;
    kp.sigma_a = 0.01;
    const double dt = 0.1;
    const Eigen::Matrix4d f = constant_velocity_transition(dt);
    Rng rng = make_rng(7, StreamTag::test);
    Eigen::Vector4d truth = Eigen::Vector4d::Zero();
    TrackState s;
    s.x = truth;
    double e2 = 0.0;
    int count = 0;
    for (int i = 0; i < 40000; ++i)
    {
        truth = f * truth;
        for (int c = 0; c < 4; ++c)
            truth(c) += draw_normal(rng, std::sqrt(kp.sigma_a));
        Eigen::Vector4d y = truth;
        for (int c = 0; c < 4; ++c)
            y(c) += draw_normal(rng, std::sqrt(kp.r_diag(c)));
        s = kf_step(s, dt, y, kp);
        if (i >= 200)
        {
            e2 += (s.x(0) - truth(0)) * (s.x(0) - truth(0));
            ++count;
        }
    }
    EXPECT_NEAR(e2 / count, s.p(0, 0), 0.05 * s.p(0, 0));
}

TEST(Kalman, SmoothsNoisyFixesWithSmallProcessNoise)
{
    KalmanParams kp;
    kp.sigma_a = 1e-5;
    kp.r_diag = Eigen::Vector4d(1e-4, 1e-4, 1e-4, 1e-4);
    Rng rng = make_rng(8, StreamTag::test);
    const double dt = 0.1, v = 0.08;
    TrackState s;
    double raw = 0.0, filtered = 0.0;
    for (int i = 1; i <= 2000; ++i)
    {
        const Vec3 truth(v * i * dt, 0.2, 0.0);
        const Vec3 fix = truth + Vec3(draw_normal(rng, 0.01), draw_normal(rng, 0.01), 0.0);
        s = kf_step(s, dt, pseudo_measurement(fix, v + draw_normal(rng, 0.01), 0.0), kp);
        if (i > 100)
        {
            raw += (fix - truth).squaredNorm();
            filtered += (Vec3(s.x(0), s.x(1), 0.0) - truth).squaredNorm();
        }
    }
    EXPECT_LT(filtered, 0.5 * raw);
}

TEST(Kalman, PseudoMeasurementComponents)
{
    const auto y = pseudo_measurement(Vec3(1, 2, 3), 0.5, kPi / 2);
    EXPECT_DOUBLE_EQ(y(0), 1.0);
    EXPECT_DOUBLE_EQ(y(1), 2.0);
    EXPECT_NEAR(y(2), 0.0, 1e-15);
    EXPECT_NEAR(y(3), 0.5, 1e-15);
}

TEST(Baseline, TrajectoryStaysInsideArea)
{
    const Scene s = load_scene(fixtures::scenario("gantry.json"));
    const auto traj = loop_trajectory(s);
    ASSERT_GT(traj.size(), 10u);
    for (std::size_t i = 1; i < traj.size(); ++i)
    {
        EXPECT_TRUE(s.area.contains(traj[i].pose.position));
        const double step = (traj[i].pose.position - traj[i - 1].pose.position).norm();
        EXPECT_NEAR(step, 0.0825 * (traj[i].t - traj[i - 1].t), 2e-3);
    }
}
