// SPDX-License-Identifier: Apache-2.0
//
// Monte-Carlo harness: grid x repeats x sweep trials with per-trial random
// streams, summaries with percentiles and CDFs, step-transition detection,
// and the tracking comparison against the baseline.

#ifndef PHASELOC_EVAL_HPP
#define PHASELOC_EVAL_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "baseline.hpp"
#include "calibration.hpp"
#include "core.hpp"
#include "phase_model.hpp"
#include "refine.hpp"
#include "rng.hpp"
#include "scene.hpp"

namespace phaseloc
{
    /// Planar Gaussian displacement whose norm has median eps: the norm is
    /// Rayleigh with median sigma * sqrt(2 ln 2), so sigma = eps / sqrt(2 ln 2).
    inline Vec3 synth_initial_estimate(const Vec3& truth, double eps_median, Rng& rng)
    {
        if (!(eps_median >= 0.0))
            throw ValidationError("synth_initial_estimate: eps must be >= 0");
        const double sigma = eps_median / std::sqrt(2.0 * std::log(2.0));
        const double dx = draw_normal(rng, sigma);
        const double dy = draw_normal(rng, sigma);
        return truth + Vec3(dx, dy, 0.0);
    }

    /// Worker count: explicit value, else PHASELOC_THREADS, else hardware.
    inline unsigned resolve_threads(unsigned requested = 0)
    {
        if (requested > 0)
            return requested;
        if (const char* env = std::getenv("PHASELOC_THREADS"))
        {
            const int v = std::atoi(env);
            if (v > 0)
                return static_cast<unsigned>(v);
        }
        return std::max(1u, std::thread::hardware_concurrency());
    }

    /// Runs body(i) for i in [0, count) on up to `threads` workers.
    inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body)
    {
        threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(count, 1)));
        if (threads <= 1)
        {
            for (std::size_t i = 0; i < count; ++i)
                body(i);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr error;
        std::mutex error_mutex;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++)
                {
                    try
                    {
                        body(i);
                    }
                    catch (...)
                    {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error)
                            error = std::current_exception();
                    }
                }
            });
        for (auto& th : pool)
            th.join();
        if (error)
            std::rethrow_exception(error);
    }

    enum class CalibrationMode
    {
        exact, // the simulator's ground-truth correction
        none,
        loess, // fitted from N_c simulated calibration points
    };

    struct GridSpec
    {
        double spacing = 0.005;
        double margin = 0.0;
        std::size_t nx = 0; // when nx and ny are set, a cell-centred nx x ny grid
        std::size_t ny = 0;
    };

    struct ExperimentSpec
    {
        GridSpec grid;
        std::size_t repeats = 3;
        std::vector<double> eps = {0.010};        // m
        std::vector<double> sigma_p = {0.0};      // rad
        std::vector<double> sigma_o = {0.0};      // rad
        std::vector<std::size_t> nc = {50};
        CalibrationMode calibration = CalibrationMode::exact;
        double loess_span = 0.5;
        int loess_degree = 1;
        bool random_heading = true;
        std::uint64_t seed = 1;
        unsigned threads = 0;
        RefineOptions refine;

        void validate() const
        {
            if (!(grid.spacing > 0.0) && (grid.nx == 0 || grid.ny == 0))
                throw ValidationError("experiment: grid spacing must be > 0");
            if (repeats < 1)
                throw ValidationError("experiment: repeats must be >= 1");
            if (eps.empty() || sigma_p.empty() || sigma_o.empty() || nc.empty())
                throw ValidationError("experiment: sweep lists must be non-empty");
            for (double e : eps)
                if (!(e >= 0.0))
                    throw ValidationError("experiment: eps must be >= 0");
        }
    };

    /// Reads the optional "experiment" section of a scenario file. Lengths in
    /// mm and angles in degrees, as in the CLI flags.
    inline ExperimentSpec parse_experiment_spec(const nlohmann::json& root, std::uint64_t seed)
    {
        ExperimentSpec spec;
        spec.seed = seed;
        auto it = root.find("experiment");
        if (it == root.end())
            return spec;
        const auto& j = *it;
        auto scaled = [](const nlohmann::json& v, double scale) {
            std::vector<double> out;
            if (v.is_array())
                for (const auto& x : v)
                    out.push_back(x.get<double>() * scale);
            else
                out.push_back(v.get<double>() * scale);
            return out;
        };
        try
        {
            if (auto g = j.find("grid"); g != j.end())
            {
                spec.grid.spacing = g->value("spacing_mm", spec.grid.spacing * 1e3) * 1e-3;
                spec.grid.margin = g->value("margin_mm", spec.grid.margin * 1e3) * 1e-3;
                spec.grid.nx = g->value("nx", spec.grid.nx);
                spec.grid.ny = g->value("ny", spec.grid.ny);
            }
            spec.repeats = j.value("repeats", spec.repeats);
            if (j.contains("eps_mm"))
                spec.eps = scaled(j["eps_mm"], 1e-3);
            if (j.contains("sigma_p_deg"))
                spec.sigma_p = scaled(j["sigma_p_deg"], kPi / 180.0);
            if (j.contains("sigma_o_deg"))
                spec.sigma_o = scaled(j["sigma_o_deg"], kPi / 180.0);
            if (j.contains("nc"))
            {
                spec.nc.clear();
                for (double v : scaled(j["nc"], 1.0))
                    spec.nc.push_back(static_cast<std::size_t>(v));
            }
            if (j.contains("calibration"))
            {
                const auto c = j["calibration"].get<std::string>();
                if (c == "exact")
                    spec.calibration = CalibrationMode::exact;
                else if (c == "none")
                    spec.calibration = CalibrationMode::none;
                else if (c == "loess")
                    spec.calibration = CalibrationMode::loess;
                else
                    throw ValidationError("experiment.calibration must be exact, none or loess");
            }
            spec.loess_span = j.value("loess_span", spec.loess_span);
            spec.loess_degree = j.value("loess_degree", spec.loess_degree);
            spec.random_heading = j.value("random_heading", spec.random_heading);
            spec.refine.significance_sigmas = j.value("significance_sigmas", spec.refine.significance_sigmas);
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ParseError(std::string("experiment: ") + e.what());
        }
        spec.validate();
        return spec;
    }

    inline std::vector<Vec3> grid_points(const Scene& scene, const GridSpec& g)
    {
        std::vector<Vec3> out;
        const Area& a = scene.area;
        if (g.nx > 0 && g.ny > 0)
        {
            const double wx = (a.x_m - 2.0 * g.margin) / static_cast<double>(g.nx);
            const double wy = (a.y_m - 2.0 * g.margin) / static_cast<double>(g.ny);
            for (std::size_t j = 0; j < g.ny; ++j)
                for (std::size_t i = 0; i < g.nx; ++i)
                    out.push_back(scene.on_plane(a.origin.x() + g.margin + (static_cast<double>(i) + 0.5) * wx,
                                                 a.origin.y() + g.margin + (static_cast<double>(j) + 0.5) * wy));
            return out;
        }
        const auto nx = static_cast<std::size_t>(std::floor((a.x_m - 2.0 * g.margin) / g.spacing + 1e-9)) + 1;
        const auto ny = static_cast<std::size_t>(std::floor((a.y_m - 2.0 * g.margin) / g.spacing + 1e-9)) + 1;
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i)
                out.push_back(scene.on_plane(a.origin.x() + g.margin + static_cast<double>(i) * g.spacing,
                                             a.origin.y() + g.margin + static_cast<double>(j) * g.spacing));
        return out;
    }

    struct TrialRecord
    {
        std::size_t trial_id = 0;
        double eps = 0.0, sigma_p = 0.0, sigma_o = 0.0;
        std::size_t nc = 0;
        Pose truth;
        double heading_used = 0.0;
        std::vector<Vec3> estimates;
        std::vector<double> errors; // m, per stage
        bool out_of_hull = false;
        bool weak_peak = false;
        bool boundary_peak = false;
        bool failed = false;
        std::string error;

        double initial_error() const { return errors.empty() ? NAN : errors.front(); }
        double final_error() const { return errors.empty() ? NAN : errors.back(); }
    };

    /// One trial: observation at the true pose, synthetic initial estimate,
    /// noisy heading, refinement. Draw order: heading, observation, initial
    /// estimate, heading noise.
    inline TrialRecord run_trial(const Scene& scene, const Vec3& position, double eps, double sigma_p, double sigma_o,
                                 const PhaseCorrection* correction, bool random_heading, const RefineOptions& opt,
                                 Rng& rng)
    {
        TrialRecord r;
        r.eps = eps;
        r.sigma_p = sigma_p;
        r.sigma_o = sigma_o;
        const double heading = random_heading ? draw_uniform(rng, -kPi, kPi) : 0.0;
        r.truth = Pose(position, heading);
        const auto obs = simulate_observation(scene, r.truth, rng, sigma_p);
        const Vec3 x0 = synth_initial_estimate(position, eps, rng);
        r.heading_used = wrap(heading + draw_normal(rng, sigma_o));
        try
        {
            const auto res = refine(scene, differences_for(scene, obs), r.heading_used, x0, correction, opt);
            r.estimates = res.estimates;
            for (const auto& s : res.stages)
            {
                r.out_of_hull = r.out_of_hull || s.out_of_hull;
                r.weak_peak = r.weak_peak || s.weak_peak;
                r.boundary_peak = r.boundary_peak || s.boundary_peak;
            }
        }
        catch (const std::exception& e)
        {
            r.failed = true;
            r.error = e.what();
            r.estimates = {x0};
        }
        for (const auto& e : r.estimates)
            r.errors.push_back((e - position).norm());
        return r;
    }

    inline std::unique_ptr<PhaseCorrection> make_correction(const Scene& scene, const ExperimentSpec& spec,
                                                            std::size_t nc, std::size_t nc_index)
    {
        switch (spec.calibration)
        {
        case CalibrationMode::none:
            return std::make_unique<NoCorrection>();
        case CalibrationMode::exact:
            return std::make_unique<ExactCorrection>();
        case CalibrationMode::loess:
        {
            Rng rng = make_rng(spec.seed, StreamTag::calibration, nc_index);
            return std::make_unique<CalibrationBundle>(
                calibrate_scene(scene, nc, rng, spec.loess_span, spec.loess_degree));
        }
        }
        return nullptr;
    }

    /// Trials in canonical order: eps, sigma_p, sigma_o, N_c (outer to inner),
    /// then grid points, then repeats. Trial i always uses stream (seed, i).
    inline std::vector<TrialRecord> run_experiment(const Scene& scene, const ExperimentSpec& spec)
    {
        spec.validate();
        const auto grid = grid_points(scene, spec.grid);
        std::vector<std::unique_ptr<PhaseCorrection>> corrections;
        for (std::size_t c = 0; c < spec.nc.size(); ++c)
            corrections.push_back(make_correction(scene, spec, spec.nc[c], c));

        struct Job
        {
            double eps, sp, so;
            std::size_t nc_index, point;
        };
        std::vector<Job> jobs;
        for (double e : spec.eps)
            for (double sp : spec.sigma_p)
                for (double so : spec.sigma_o)
                    for (std::size_t c = 0; c < spec.nc.size(); ++c)
                        for (std::size_t g = 0; g < grid.size(); ++g)
                            for (std::size_t rep = 0; rep < spec.repeats; ++rep)
                                jobs.push_back({e, sp, so, c, g});

        std::vector<TrialRecord> out(jobs.size());
        parallel_for(jobs.size(), resolve_threads(spec.threads), [&](std::size_t i) {
            const Job& j = jobs[i];
            Rng rng = make_rng(spec.seed, StreamTag::trial, i);
            TrialRecord r = run_trial(scene, grid[j.point], j.eps, j.sp, j.so, corrections[j.nc_index].get(),
                                      spec.random_heading, spec.refine, rng);
            r.trial_id = i;
            r.nc = spec.calibration == CalibrationMode::loess ? spec.nc[j.nc_index] : 0;
            out[i] = std::move(r);
        });
        return out;
    }

    // ------------------------------------------------------------------
    // Statistics

    /// Linear interpolation between order statistics: position (n - 1) p.
    inline double percentile_sorted(const std::vector<double>& sorted, double p)
    {
        if (sorted.empty())
            throw InsufficientDataError("percentile of empty sample");
        const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }

    inline double percentile(std::vector<double> v, double p)
    {
        std::sort(v.begin(), v.end());
        return percentile_sorted(v, p);
    }

    inline double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

    struct StageSummary
    {
        double median = 0.0;
        double p90 = 0.0;
        std::vector<double> cdf; // sorted errors, m
    };

    struct GroupSummary
    {
        double eps = 0.0, sigma_p = 0.0, sigma_o = 0.0;
        std::size_t nc = 0;
        std::size_t count = 0;
        std::size_t failed = 0;
        std::vector<StageSummary> stages;
    };

    /// Per sweep point and stage: median, p90 and the sorted errors. Failed
    /// trials are counted but carry no errors past stage 0.
    inline std::vector<GroupSummary> summarize(const std::vector<TrialRecord>& records)
    {
        if (records.empty())
            throw InsufficientDataError("summarize: no records");
        using Key = std::tuple<double, double, double, std::size_t>;
        std::map<Key, std::vector<const TrialRecord*>> groups;
        for (const auto& r : records)
            groups[{r.eps, r.sigma_p, r.sigma_o, r.nc}].push_back(&r);
        std::vector<GroupSummary> out;
        for (const auto& [key, recs] : groups)
        {
            GroupSummary g;
            std::tie(g.eps, g.sigma_p, g.sigma_o, g.nc) = key;
            g.count = recs.size();
            std::size_t stages = 0;
            for (const auto* r : recs)
            {
                stages = std::max(stages, r->errors.size());
                g.failed += r->failed ? 1 : 0;
            }
            for (std::size_t s = 0; s < stages; ++s)
            {
                StageSummary ss;
                for (const auto* r : recs)
                    if (s < r->errors.size())
                        ss.cdf.push_back(r->errors[s]);
                std::sort(ss.cdf.begin(), ss.cdf.end());
                ss.median = percentile_sorted(ss.cdf, 0.5);
                ss.p90 = percentile_sorted(ss.cdf, 0.9);
                g.stages.push_back(std::move(ss));
            }
            out.push_back(std::move(g));
        }
        return out;
    }

    struct Transition
    {
        double threshold = 0.0; // m, success probability 0.5
        double width = 0.0;     // m, between success probabilities 0.9 and 0.1
        std::size_t successes = 0, failures = 0;
    };

    /// Logistic regression of success (final error < success_threshold) on the
    /// initial error, fitted by IRLS with a small ridge on the slope.
    inline Transition detect_transition(const std::vector<double>& initial_errors,
                                        const std::vector<double>& final_errors, double success_threshold)
    {
        if (initial_errors.size() != final_errors.size())
            throw ValidationError("detect_transition: input lengths differ");
        const std::size_t n = initial_errors.size();
        std::vector<double> y(n);
        Transition t;
        for (std::size_t i = 0; i < n; ++i)
        {
            y[i] = final_errors[i] < success_threshold ? 1.0 : 0.0;
            (y[i] > 0.5 ? t.successes : t.failures)++;
        }
        if (t.successes == 0 || t.failures == 0)
            throw InsufficientDataError("detect_transition: need both successes and failures");

        double mean = 0.0, var = 0.0;
        for (double e : initial_errors)
            mean += e;
        mean /= static_cast<double>(n);
        for (double e : initial_errors)
            var += (e - mean) * (e - mean);
        const double sd = std::sqrt(var / static_cast<double>(n));
        if (!(sd > 0.0))
            throw InsufficientDataError("detect_transition: initial errors do not vary");

        Eigen::Vector2d beta = Eigen::Vector2d::Zero();
        const double ridge = 1e-6;
        for (int it = 0; it < 200; ++it)
        {
            Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
            Eigen::Vector2d g = Eigen::Vector2d::Zero();
            for (std::size_t i = 0; i < n; ++i)
            {
                const double z = (initial_errors[i] - mean) / sd;
                const double p = 1.0 / (1.0 + std::exp(-(beta(0) + beta(1) * z)));
                const double w = std::max(p * (1.0 - p), 1e-12);
                const Eigen::Vector2d xi(1.0, z);
                h += w * xi * xi.transpose();
                g += (y[i] - p) * xi;
            }
            h(1, 1) += ridge;
            g(1) -= ridge * beta(1);
            const Eigen::Vector2d d = h.ldlt().solve(g);
            beta += d;
            if (d.norm() < 1e-10)
                break;
        }
        if (beta(1) == 0.0)
            throw InsufficientDataError("detect_transition: success does not depend on the initial error");
        t.threshold = mean - sd * beta(0) / beta(1);
        t.width = 2.0 * std::log(9.0) * sd / std::abs(beta(1));
        return t;
    }

    // ------------------------------------------------------------------
    // Output

    inline std::string fmt(double v, int digits = 9)
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*g", digits, v);
        return buf;
    }

    /// Records CSV; deterministic for a given record list.
    inline void write_records_csv(std::ostream& os, const std::vector<TrialRecord>& records, std::size_t stages)
    {
        os << "trial_id,eps_mm,sigma_p_deg,sigma_o_deg,nc,x_true,y_true,heading_true";
        for (std::size_t s = 0; s < stages; ++s)
            os << ",err_stage" << s << "_mm";
        os << ",flags\n";
        for (const auto& r : records)
        {
            os << r.trial_id << ',' << fmt(r.eps * 1e3) << ',' << fmt(rad2deg(r.sigma_p)) << ','
               << fmt(rad2deg(r.sigma_o)) << ',' << r.nc << ',' << fmt(r.truth.position.x(), 12) << ','
               << fmt(r.truth.position.y(), 12) << ',' << fmt(r.truth.heading, 12);
            for (std::size_t s = 0; s < stages; ++s)
                os << ',' << (s < r.errors.size() ? fmt(r.errors[s] * 1e3, 12) : std::string("nan"));
            std::string flags;
            auto add = [&flags](bool on, const char* name) {
                if (on)
                    flags += flags.empty() ? name : std::string("|") + name;
            };
            add(r.failed, "failed");
            add(r.out_of_hull, "out_of_hull");
            add(r.weak_peak, "weak_peak");
            add(r.boundary_peak, "boundary_peak");
            os << ',' << flags << '\n';
        }
    }

    inline nlohmann::json summary_json(const std::vector<GroupSummary>& groups)
    {
        nlohmann::json j;
        j["percentile_method"] = "linear interpolation between order statistics, position (n-1)p";
        j["units"] = "mm";
        auto& arr = j["groups"] = nlohmann::json::array();
        for (const auto& g : groups)
        {
            nlohmann::json jg;
            jg["eps_mm"] = g.eps * 1e3;
            jg["sigma_p_deg"] = rad2deg(g.sigma_p);
            jg["sigma_o_deg"] = rad2deg(g.sigma_o);
            jg["nc"] = g.nc;
            jg["count"] = g.count;
            jg["failed"] = g.failed;
            auto& st = jg["stages"] = nlohmann::json::array();
            for (const auto& s : g.stages)
            {
                std::vector<double> cdf_mm(s.cdf.size());
                for (std::size_t i = 0; i < s.cdf.size(); ++i)
                    cdf_mm[i] = s.cdf[i] * 1e3;
                st.push_back({{"median_mm", s.median * 1e3}, {"p90_mm", s.p90 * 1e3}, {"cdf_mm", cdf_mm}});
            }
            arr.push_back(std::move(jg));
        }
        return j;
    }

    // ------------------------------------------------------------------
    // Tracking: the baseline's filtered positions feed refinement step by step.

    struct TrackingRecord
    {
        BaselineStep baseline;
        std::vector<Vec3> estimates;
        double baseline_error = 0.0; // m
        double refined_error = 0.0;  // m
        bool failed = false;
    };

    inline std::vector<TrackingRecord> run_tracking(const Scene& scene, const std::vector<TrajectoryPoint>& trajectory,
                                                    const BaselineConfig& cfg, const PhaseCorrection* correction,
                                                    std::uint64_t seed, double sigma_p = 0.0, unsigned threads = 0,
                                                    const RefineOptions& opt = {})
    {
        Rng cal_rng = make_rng(seed, StreamTag::tdoa_calibration);
        const DelayCalibration dcal = calibrate_baseline_tdoa(scene, scene.bands.back(), cfg, cal_rng);
        Rng base_rng = make_rng(seed, StreamTag::baseline);
        const auto steps = run_baseline(scene, trajectory, cfg, &dcal, base_rng);
        std::vector<TrackingRecord> out(steps.size());
        parallel_for(steps.size(), resolve_threads(threads), [&](std::size_t i) {
            Rng rng = make_rng(seed, StreamTag::tracking, i);
            TrackingRecord rec;
            rec.baseline = steps[i];
            const Vec3 truth = steps[i].truth.position;
            rec.baseline_error = (steps[i].filtered - truth).norm();
            const auto obs = simulate_observation(scene, steps[i].truth, rng, sigma_p, steps[i].t);
            try
            {
                const auto res = refine(scene, differences_for(scene, obs), steps[i].measured_heading,
                                        steps[i].filtered, correction, opt);
                rec.estimates = res.estimates;
                rec.refined_error = (res.estimates.back() - truth).norm();
            }
            catch (const std::exception&)
            {
                rec.failed = true;
                rec.estimates = {steps[i].filtered};
                rec.refined_error = rec.baseline_error;
            }
            out[i] = std::move(rec);
        });
        return out;
    }

    inline void write_tracking_csv(std::ostream& os, const std::vector<TrackingRecord>& recs)
    {
        os << "t,x_true,y_true,x_tdoa,y_tdoa,x_kf,y_kf,x_refined,y_refined,err_kf_mm,err_refined_mm,failed\n";
        for (const auto& r : recs)
        {
            const auto& b = r.baseline;
            const Vec3& fin = r.estimates.back();
            os << fmt(b.t, 12) << ',' << fmt(b.truth.position.x(), 12) << ',' << fmt(b.truth.position.y(), 12) << ','
               << fmt(b.tdoa.x(), 12) << ',' << fmt(b.tdoa.y(), 12) << ',' << fmt(b.filtered.x(), 12) << ','
               << fmt(b.filtered.y(), 12) << ',' << fmt(fin.x(), 12) << ',' << fmt(fin.y(), 12) << ','
               << fmt(r.baseline_error * 1e3, 12) << ',' << fmt(r.refined_error * 1e3, 12) << ','
               << (r.failed ? 1 : 0) << '\n';
        }
    }
} // namespace phaseloc

#endif // PHASELOC_EVAL_HPP
