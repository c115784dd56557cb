// SPDX-License-Identifier: Apache-2.0
//
// Comparison tracker: calibrated TDoA fixes on the highest band fused with
// wheel-encoder speed and magnetometer heading in a constant-velocity Kalman
// filter. Its output serves as the initial estimate for refinement.

#ifndef PHASELOC_BASELINE_HPP
#define PHASELOC_BASELINE_HPP

#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calibration.hpp"
#include "channel.hpp"
#include "core.hpp"
#include "rng.hpp"
#include "scene.hpp"

namespace phaseloc
{
    struct TdoaObservation
    {
        std::size_t band_index = 0;
        std::vector<double> delays; // s, per pair (Band::pair_anchors order)
        double timestamp = 0.0;
    };

    struct SensorModel
    {
        double wheel_radius = 0.1; // m
        double ppr = 1024.0;
        double period = 0.175; // s
        double magnetometer_sigma = deg2rad(0.86);

        void validate() const
        {
            if (!(wheel_radius > 0.0 && ppr > 0.0 && period > 0.0))
                throw ValidationError("sensor model: wheel radius, PPR and period must be > 0");
            if (!(magnetometer_sigma >= 0.0))
                throw ValidationError("sensor model: magnetometer sigma must be >= 0");
        }
        double pulse_length() const { return kTwoPi * wheel_radius / ppr; }
    };

    /// Standard deviation of speed quantization to whole pulses per period.
    inline double encoder_sigma(const SensorModel& m) { return m.pulse_length() / (std::sqrt(12.0) * m.period); }

    /// Speed from the distance travelled over one period, rounded to whole pulses.
    inline double simulate_encoder(double true_speed, const SensorModel& m)
    {
        if (!(true_speed >= 0.0))
            throw ValidationError("simulate_encoder: speed must be >= 0");
        const double pl = m.pulse_length();
        return std::round(true_speed * m.period / pl) * pl / m.period;
    }

    inline double simulate_magnetometer(double true_heading, double sigma, Rng& rng)
    {
        return wrap(true_heading + draw_normal(rng, sigma));
    }

    /// Parabolic interpolation of |h| around the earliest CIR peak, in seconds.
    inline double earliest_peak_delay(const ChannelImpulseResponse& cir, double peak_threshold_fraction)
    {
        const std::size_t l = earliest_peak_index(cir, peak_threshold_fraction);
        const std::size_t n = cir.samples.size();
        const double ym = std::abs(cir.samples[(l + n - 1) % n]);
        const double y0 = std::abs(cir.samples[l]);
        const double yp = std::abs(cir.samples[(l + 1) % n]);
        const double den = ym - 2.0 * y0 + yp;
        const double frac = den < 0.0 ? 0.5 * (ym - yp) / den : 0.0;
        const double dt = cir.delays.size() > 1 ? cir.delays[1] - cir.delays[0] : 0.0;
        return (static_cast<double>(l) + frac) * dt;
    }

    /// Differential delays to the true anchors plus per-anchor Gaussian noise.
    /// With reflectors, each anchor's delay is read from the synthesized CIR so
    /// the earliest-peak displacement adds its bias.
    inline TdoaObservation simulate_tdoa(const Scene& scene, const Band& band, const Pose& pose, Rng& rng,
                                         double delay_noise_sigma, double timestamp = 0.0)
    {
        const Vec3 tx = tx_antenna_position(pose, band);
        std::vector<double> tau(band.anchor_count());
        for (std::size_t n = 0; n < band.anchor_count(); ++n)
        {
            if (scene.reflectors.empty())
            {
                tau[n] = (band.true_anchor(n) - tx).norm() / kSpeedOfLight;
            }
            else
            {
                const auto cfr = synthesize_cfr(scene, band, n, pose, 0.0, rng);
                tau[n] = earliest_peak_delay(cfr_to_cir(cfr, scene.upsampling_factor), scene.peak_threshold_fraction);
            }
            tau[n] += draw_normal(rng, delay_noise_sigma);
        }
        TdoaObservation obs;
        obs.band_index = band.index;
        obs.timestamp = timestamp;
        for (std::size_t n : band.pair_anchors())
            obs.delays.push_back(tau[n] - tau[band.reference_index]);
        return obs;
    }

    struct TdoaSolution
    {
        Vec3 position = Vec3::Zero();
        int iterations = 0;
        bool converged = false;
    };

    /// Damped Gauss-Newton on the differential ranges of the nominal anchors
    /// (in metres), planar on the target plane or full 3D.
    inline TdoaSolution solve_tdoa(const Scene& scene, const Band& band, const TdoaObservation& obs,
                                   const DelayCalibration* calibration, const Vec3& init)
    {
        const auto pairs = band.pair_anchors();
        const int dims = scene.planar ? 2 : 3;
        if (obs.delays.size() != pairs.size())
            throw ValidationError("solve_tdoa: observation length does not match band");
        if (pairs.size() < static_cast<std::size_t>(dims))
            throw ValidationError("solve_tdoa: need at least " + std::to_string(dims) + " differential delays");
        const Vec3 offset = tx_antenna_position(Pose(Vec3::Zero(), 0.0), band);
        const Eigen::Index m = static_cast<Eigen::Index>(pairs.size());

        auto residuals = [&](const Vec3& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
            const Vec3 tx = x + offset;
            const Vec3 ar = band.anchors[band.reference_index];
            const double dr = (tx - ar).norm();
            for (Eigen::Index p = 0; p < m; ++p)
            {
                const Vec3& an = band.anchors[pairs[static_cast<std::size_t>(p)]];
                const double dn = (tx - an).norm();
                double model = dn - dr;
                if (calibration)
                    model += kSpeedOfLight * calibration->correction(static_cast<std::size_t>(p), tx);
                r(p) = kSpeedOfLight * obs.delays[static_cast<std::size_t>(p)] - model;
                if (jac)
                {
                    const Vec3 g = (tx - an) / dn - (tx - ar) / dr;
                    for (int c = 0; c < dims; ++c)
                        (*jac)(p, c) = g(c);
                }
            }
            return r.squaredNorm();
        };

        TdoaSolution sol;
        Vec3 x = init;
        if (scene.planar)
            x.z() = scene.target_plane_height;
        Eigen::VectorXd r(m), rt(m);
        Eigen::MatrixXd j(m, dims);
        double cost = residuals(x, r, &j);
        double mu = 1e-6;
        for (sol.iterations = 1; sol.iterations <= 50; ++sol.iterations)
        {
            const Eigen::MatrixXd jtj = j.transpose() * j;
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(jtj);
            const auto sv = svd.singularValues();
            if (sv(dims - 1) <= 1e-12 * std::max(1.0, sv(0)))
                throw DegenerateGeometryError("solve_tdoa: Jacobian is rank deficient (degenerate anchor geometry)");
            const Eigen::VectorXd g = j.transpose() * r;
            bool accepted = false;
            Vec3 step = Vec3::Zero();
            for (int tries = 0; tries < 30 && !accepted; ++tries)
            {
                Eigen::MatrixXd a = jtj;
                a.diagonal().array() += mu * (1.0 + jtj.diagonal().array());
                const Eigen::VectorXd d = a.ldlt().solve(g);
                step.setZero();
                for (int c = 0; c < dims; ++c)
                    step(c) = d(c);
                const double c_new = residuals(x + step, rt, nullptr);
                if (c_new <= cost)
                {
                    accepted = true;
                    x += step;
                    cost = residuals(x, r, &j);
                    mu = std::max(mu * 0.1, 1e-12);
                }
                else
                {
                    mu *= 10.0;
                }
            }
            if (!accepted || step.norm() < 1e-4)
            {
                sol.converged = true;
                break;
            }
        }
        sol.iterations = std::min(sol.iterations, 50);
        sol.position = x;
        return sol;
    }

    struct TrackState
    {
        Eigen::Vector4d x = Eigen::Vector4d::Zero(); // x, y, vx, vy
        Eigen::Matrix4d p = Eigen::Matrix4d::Identity();
        double timestamp = 0.0;
    };

    /// Q = sigma_a * I4 and R = diag(sigma_x, sigma_y, sigma_vx, sigma_vy), used
    /// as given (not squared).
    struct KalmanParams
    {
        double sigma_a = 50.0;
        Eigen::Vector4d r_diag = Eigen::Vector4d(0.3, 0.3, 5.0, 5.0);
    };

    inline Eigen::Matrix4d constant_velocity_transition(double dt)
    {
        Eigen::Matrix4d f = Eigen::Matrix4d::Identity();
        f(0, 2) = dt;
        f(1, 3) = dt;
        return f;
    }

    /// Predict with the constant-velocity model, then update with H = I4.
    inline TrackState kf_step(const TrackState& s, double dt, const Eigen::Vector4d& y, const KalmanParams& kp)
    {
        if (!(dt > 0.0))
            throw ValidationError("kf_step: dt must be > 0");
        const Eigen::Matrix4d f = constant_velocity_transition(dt);
        TrackState out;
        out.timestamp = s.timestamp + dt;
        Eigen::Vector4d x = f * s.x;
        Eigen::Matrix4d p = f * s.p * f.transpose() + kp.sigma_a * Eigen::Matrix4d::Identity();
        const Eigen::Matrix4d sm = p + Eigen::Matrix4d(kp.r_diag.asDiagonal());
        Eigen::LDLT<Eigen::Matrix4d> ldlt(sm);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
            throw std::runtime_error("kf_step: innovation covariance is singular");
        const Eigen::Matrix4d k = ldlt.solve(p.transpose()).transpose(); // P S^-1, S symmetric
        x += k * (y - x);
        const Eigen::Matrix4d ik = Eigen::Matrix4d::Identity() - k;
        // Joseph form keeps P positive semi-definite.
        p = ik * p * ik.transpose() + k * Eigen::Matrix4d(kp.r_diag.asDiagonal()) * k.transpose();
        out.x = x;
        out.p = 0.5 * (p + p.transpose());
        return out;
    }

    inline Eigen::Vector4d pseudo_measurement(const Vec3& fix, double speed, double heading)
    {
        return {fix.x(), fix.y(), speed * std::cos(heading), speed * std::sin(heading)};
    }

    struct TrajectoryPoint
    {
        double t = 0.0;
        Pose pose;
    };

    /// Pick-and-place style path: a large circle with small loops superimposed,
    /// traversed at constant speed with the heading along the motion.
    inline std::vector<TrajectoryPoint> loop_trajectory(const Scene& scene, double speed = 0.0825, double dt = 0.1,
                                                        double main_radius = 0.35, double loop_radius = 0.15,
                                                        int loops = 4)
    {
        const Vec2 c = scene.area.center();
        auto curve = [&](double s) {
            return Vec2(c.x() + main_radius * std::cos(s) + loop_radius * std::cos(loops * s),
                        c.y() + main_radius * std::sin(s) - loop_radius * std::sin(loops * s));
        };
        const int samples = 20000;
        std::vector<double> arc(samples + 1, 0.0);
        std::vector<Vec2> pts(samples + 1);
        for (int i = 0; i <= samples; ++i)
        {
            pts[i] = curve(kTwoPi * i / samples);
            if (i > 0)
                arc[i] = arc[i - 1] + (pts[i] - pts[i - 1]).norm();
        }
        const double total = arc.back();
        std::vector<TrajectoryPoint> out;
        std::size_t seg = 1;
        for (int step = 0;; ++step)
        {
            const double t = step * dt;
            const double s = t * speed;
            if (s > total)
                break;
            while (seg < arc.size() - 1 && arc[seg] < s)
                ++seg;
            const double a = (s - arc[seg - 1]) / std::max(arc[seg] - arc[seg - 1], 1e-15);
            const Vec2 p = pts[seg - 1] + a * (pts[seg] - pts[seg - 1]);
            const Vec2 dir = pts[seg] - pts[seg - 1];
            out.push_back({t, Pose(scene.on_plane(p.x(), p.y()), std::atan2(dir.y(), dir.x()))});
        }
        return out;
    }

    /// CSV with header t_s,x_m,y_m,heading_rad.
    inline std::vector<TrajectoryPoint> load_trajectory(const std::string& path, const Scene& scene)
    {
        std::ifstream in(path);
        if (!in)
            throw ValidationError("trajectory file not found: " + path);
        std::string line;
        std::vector<TrajectoryPoint> out;
        std::getline(in, line);
        std::size_t row = 1;
        while (std::getline(in, line))
        {
            ++row;
            if (line.empty())
                continue;
            std::stringstream ss(line);
            std::string cell;
            double v[4];
            for (double& d : v)
            {
                if (!std::getline(ss, cell, ','))
                    throw ParseError("trajectory " + path + ": row " + std::to_string(row) + " needs 4 columns");
                try
                {
                    d = std::stod(cell);
                }
                catch (const std::exception&)
                {
                    throw ParseError("trajectory " + path + ": bad number '" + cell + "' in row " +
                                     std::to_string(row));
                }
            }
            if (!out.empty() && !(v[0] > out.back().t))
                throw ValidationError("trajectory " + path + ": timestamps must be strictly increasing");
            out.push_back({v[0], Pose(scene.on_plane(v[1], v[2]), v[3])});
        }
        if (out.size() < 2)
            throw ValidationError("trajectory " + path + ": need at least 2 rows");
        return out;
    }

    struct BaselineConfig
    {
        SensorModel sensors;
        KalmanParams kalman;
        std::optional<double> delay_noise_sigma; // s; default from bandwidth
        double delay_noise_factor = 0.02;        // sigma = factor / B when no explicit sigma
        std::size_t calibration_points = 100;
        double calibration_span = 0.5;

        double delay_sigma(const Band& band) const
        {
            return delay_noise_sigma ? *delay_noise_sigma : delay_noise_factor / band.bandwidth_hz;
        }
    };

    inline BaselineConfig parse_baseline_config(const nlohmann::json& root)
    {
        BaselineConfig c;
        auto it = root.find("baseline");
        if (it == root.end())
            return c;
        const auto& j = *it;
        try
        {
            c.sensors.wheel_radius = j.value("wheel_radius_m", c.sensors.wheel_radius);
            c.sensors.ppr = j.value("encoder_ppr", c.sensors.ppr);
            c.sensors.period = j.value("velocity_period_s", c.sensors.period);
            if (j.contains("magnetometer_sigma_deg"))
                c.sensors.magnetometer_sigma = deg2rad(j["magnetometer_sigma_deg"].get<double>());
            c.kalman.sigma_a = j.value("sigma_a", c.kalman.sigma_a);
            if (j.contains("r_diag"))
            {
                const auto r = j["r_diag"].get<std::vector<double>>();
                if (r.size() != 4)
                    throw ValidationError("baseline.r_diag needs 4 values");
                c.kalman.r_diag = Eigen::Vector4d(r[0], r[1], r[2], r[3]);
            }
            if (j.contains("delay_noise_s"))
                c.delay_noise_sigma = j["delay_noise_s"].get<double>();
            c.delay_noise_factor = j.value("delay_noise_factor", c.delay_noise_factor);
            c.calibration_points = j.value("calibration_points", c.calibration_points);
            c.calibration_span = j.value("calibration_span", c.calibration_span);
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ParseError(std::string("baseline: ") + e.what());
        }
        c.sensors.validate();
        if (!(c.kalman.r_diag.minCoeff() > 0.0) || !(c.kalman.sigma_a >= 0.0))
            throw ValidationError("baseline: R must be positive and sigma_a non-negative");
        return c;
    }

    /// Delay residuals at known positions fitted with LOESS, per pair.
    inline DelayCalibration calibrate_baseline_tdoa(const Scene& scene, const Band& band, const BaselineConfig& cfg,
                                                    Rng& rng)
    {
        const auto locs = calibration_locations(scene, cfg.calibration_points);
        const auto pairs = band.pair_anchors();
        std::vector<std::vector<double>> res(pairs.size());
        std::vector<Vec3> tx_locs;
        for (const auto& loc : locs)
        {
            const Pose pose(loc, 0.0);
            const Vec3 tx = tx_antenna_position(pose, band);
            tx_locs.push_back(tx);
            const auto obs = simulate_tdoa(scene, band, pose, rng, cfg.delay_sigma(band));
            const double dr = (band.anchors[band.reference_index] - tx).norm();
            for (std::size_t p = 0; p < pairs.size(); ++p)
                res[p].push_back(obs.delays[p] - ((band.anchors[pairs[p]] - tx).norm() - dr) / kSpeedOfLight);
        }
        return calibrate_tdoa(tx_locs, res, cfg.calibration_span, 1);
    }

    struct BaselineStep
    {
        double t = 0.0;
        Pose truth;
        Vec3 tdoa = Vec3::Zero();
        Vec3 filtered = Vec3::Zero();
        double measured_heading = 0.0;
        bool tdoa_converged = true;
    };

    /// TDoA fix, encoder and magnetometer readings, Kalman update, per step.
    inline std::vector<BaselineStep> run_baseline(const Scene& scene, const std::vector<TrajectoryPoint>& trajectory,
                                                  const BaselineConfig& cfg, const DelayCalibration* calibration,
                                                  Rng& rng)
    {
        if (trajectory.empty())
            throw ValidationError("run_baseline: empty trajectory");
        const Band& band = scene.bands.back();
        std::vector<BaselineStep> out;
        out.reserve(trajectory.size());
        TrackState state;
        Vec3 init = scene.on_plane(scene.area.center().x(), scene.area.center().y());
        for (std::size_t i = 0; i < trajectory.size(); ++i)
        {
            const auto& tp = trajectory[i];
            if (i > 0 && !(tp.t > trajectory[i - 1].t))
                throw ValidationError("run_baseline: timestamps must be strictly increasing");
            BaselineStep st;
            st.t = tp.t;
            st.truth = tp.pose;
            const auto obs = simulate_tdoa(scene, band, tp.pose, rng, cfg.delay_sigma(band), tp.t);
            const auto sol = solve_tdoa(scene, band, obs, calibration, init);
            st.tdoa = sol.position;
            st.tdoa_converged = sol.converged;

            double true_speed = 0.0;
            if (i + 1 < trajectory.size())
                true_speed = (trajectory[i + 1].pose.position - tp.pose.position).norm() / (trajectory[i + 1].t - tp.t);
            else if (i > 0)
                true_speed = (tp.pose.position - trajectory[i - 1].pose.position).norm() / (tp.t - trajectory[i - 1].t);
            const double speed = simulate_encoder(true_speed, cfg.sensors);
            st.measured_heading = simulate_magnetometer(tp.pose.heading, cfg.sensors.magnetometer_sigma, rng);
            const Eigen::Vector4d y = pseudo_measurement(sol.position, speed, st.measured_heading);

            if (i == 0)
            {
                state.x = y;
                state.p = Eigen::Matrix4d(cfg.kalman.r_diag.asDiagonal());
                state.timestamp = tp.t;
            }
            else
            {
                state = kf_step(state, tp.t - trajectory[i - 1].t, y, cfg.kalman);
            }
            st.filtered = scene.on_plane(state.x(0), state.x(1));
            init = st.filtered;
            out.push_back(st);
        }
        return out;
    }
} // namespace phaseloc

#endif // PHASELOC_BASELINE_HPP
