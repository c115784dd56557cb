// SPDX-License-Identifier: Apache-2.0
//
// phaseloc_cli: scenario-driven front end for the simulator.
//
//   phaseloc_cli evaluate scenarios/gantry.json --eps-mm 10 --out results/
//   phaseloc_cli dump-likelihood scenarios/gantry.json --band 2 --at 0.6,0.6
//
// Exit status: 0 on success, 1 on invalid input, 2 on runtime failure.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <phaseloc/phaseloc.hpp>

namespace fs = std::filesystem;
using namespace phaseloc;

namespace
{
    struct Options
    {
        std::string subcommand;
        std::string scenario;
        std::string out = ".";
        std::optional<std::uint64_t> seed;
        unsigned threads = 0;
        std::vector<std::string> overrides;
        std::vector<double> eps_mm;
        std::vector<double> sigma_p_deg;
        std::vector<double> sigma_o_deg;
        std::vector<std::size_t> nc;
        std::size_t band = 0; // 1-based; 0 means the last band
        std::string at;
        std::string trajectory;
        std::string calibration;
        std::size_t trials = 1;
    };

    Vec2 parse_xy(const std::string& s)
    {
        std::stringstream ss(s);
        double x = 0.0, y = 0.0;
        char comma = 0;
        if (!(ss >> x >> comma >> y) || comma != ',')
            throw ValidationError("--at expects x,y in metres, got '" + s + "'");
        return Vec2(x, y);
    }

    std::ofstream open_out(const Options& o, const std::string& name)
    {
        fs::create_directories(o.out);
        const fs::path p = fs::path(o.out) / name;
        std::ofstream f(p);
        if (!f)
            throw std::runtime_error("cannot write " + p.string());
        return f;
    }

    void print_summary(const std::string& label, std::vector<double> errors_m)
    {
        std::printf("%s: count=%zu median_mm=%.4f p90_mm=%.4f\n", label.c_str(), errors_m.size(),
                    errors_m.empty() ? 0.0 : median(errors_m) * 1e3,
                    errors_m.empty() ? 0.0 : percentile(errors_m, 0.9) * 1e3);
    }

    struct Loaded
    {
        nlohmann::json root;
        Scene scene;
        std::uint64_t seed;
    };

    Loaded load(const Options& o)
    {
        Loaded l;
        l.root = read_scenario_json(o.scenario);
        apply_overrides(l.root, o.overrides);
        l.scene = parse_scene(l.root);
        l.seed = o.seed ? *o.seed : l.scene.seed;
        l.scene.seed = l.seed;
        return l;
    }

    ExperimentSpec experiment(const Loaded& l, const Options& o)
    {
        ExperimentSpec spec = parse_experiment_spec(l.root, l.seed);
        spec.threads = o.threads;
        if (!o.eps_mm.empty())
        {
            spec.eps.clear();
            for (double v : o.eps_mm)
                spec.eps.push_back(v * 1e-3);
        }
        if (!o.sigma_p_deg.empty())
        {
            spec.sigma_p.clear();
            for (double v : o.sigma_p_deg)
                spec.sigma_p.push_back(deg2rad(v));
        }
        if (!o.sigma_o_deg.empty())
        {
            spec.sigma_o.clear();
            for (double v : o.sigma_o_deg)
                spec.sigma_o.push_back(deg2rad(v));
        }
        if (!o.nc.empty())
        {
            spec.nc = o.nc;
            spec.calibration = CalibrationMode::loess;
        }
        spec.validate();
        return spec;
    }

    std::unique_ptr<PhaseCorrection> correction_for(const Loaded& l, const Options& o)
    {
        if (!o.calibration.empty())
            return std::make_unique<CalibrationBundle>(load_bundle(o.calibration));
        ExperimentSpec spec = experiment(l, o);
        return make_correction(l.scene, spec, spec.nc.front(), 0);
    }

    const Band& pick_band(const Scene& s, std::size_t band)
    {
        if (band == 0)
            return s.bands.back();
        if (band > s.band_count())
            throw ValidationError("--band " + std::to_string(band) + " out of range (scene has " +
                                  std::to_string(s.band_count()) + " bands)");
        return s.bands[band - 1];
    }

    Vec3 position_of(const Loaded& l, const Options& o)
    {
        const Vec2 p = o.at.empty() ? l.scene.area.center() : parse_xy(o.at);
        const Vec3 x = l.scene.on_plane(p.x(), p.y());
        if (!l.scene.area.contains(x))
            throw ValidationError("--at " + o.at + " is outside the scenario area");
        return x;
    }

    int cmd_simulate(const Options& o)
    {
        const Loaded l = load(o);
        const ExperimentSpec spec = experiment(l, o);
        const auto points = o.at.empty() ? grid_points(l.scene, spec.grid) : std::vector<Vec3>{position_of(l, o)};
        auto f = open_out(o, "observations.csv");
        f << "point,x_true,y_true,z_true,heading_rad,band,anchor,phase_rad\n";
        const double sp = spec.sigma_p.front();
        for (std::size_t i = 0; i < points.size(); ++i)
        {
            Rng rng = make_rng(l.seed, StreamTag::cli, i);
            const double heading = spec.random_heading ? draw_uniform(rng, -kPi, kPi) : 0.0;
            const Pose pose(points[i], heading);
            const auto obs = simulate_observation(l.scene, pose, rng, sp);
            for (const auto& ob : obs)
                for (std::size_t n = 0; n < ob.phases.size(); ++n)
                    f << i << ',' << fmt(points[i].x(), 12) << ',' << fmt(points[i].y(), 12) << ','
                      << fmt(points[i].z(), 12) << ',' << fmt(pose.heading, 12) << ',' << ob.band_index << ',' << n
                      << ',' << fmt(ob.phases[n], 12) << '\n';
        }
        std::printf("simulate: count=%zu positions, %zu bands\n", points.size(), l.scene.band_count());
        return 0;
    }

    int cmd_calibrate(const Options& o)
    {
        const Loaded l = load(o);
        const ExperimentSpec spec = experiment(l, o);
        const std::size_t nc = spec.nc.front();
        Rng rng = make_rng(l.seed, StreamTag::calibration, 0);
        const CalibrationBundle bundle =
            calibrate_scene(l.scene, nc, rng, spec.loess_span, spec.loess_degree, spec.sigma_p.front());
        fs::create_directories(o.out);
        save_bundle((fs::path(o.out) / "calibration.json").string(), bundle);

        // Check the fit against the simulator's own systematic phase on the evaluation grid.
        const ExactCorrection exact;
        std::vector<double> err_deg;
        for (const auto& x : grid_points(l.scene, spec.grid))
            for (const Band& b : l.scene.bands)
            {
                const Vec3 tx = tx_antenna_position(Pose(x, 0.0), b);
                for (std::size_t p = 0; p < b.pair_anchors().size(); ++p)
                {
                    const double truth = exact.pair_correction(b, p, tx, nullptr);
                    err_deg.push_back(std::abs(rad2deg(wrap(bundle.pair_correction(b, p, tx, nullptr) - truth))));
                }
            }
        if (err_deg.empty())
            err_deg.push_back(0.0);
        std::printf("calibrate: count=%zu points, residual median_deg=%.4f p90_deg=%.4f\n", nc, median(err_deg),
                    percentile(err_deg, 0.9));
        return 0;
    }

    int cmd_refine(const Options& o)
    {
        const Loaded l = load(o);
        const ExperimentSpec spec = experiment(l, o);
        const Vec3 x = position_of(l, o);
        const auto corr = correction_for(l, o);
        auto f = open_out(o, "refine.csv");
        f << "trial,x_true,y_true,heading_rad";
        for (std::size_t k = 0; k <= l.scene.band_count(); ++k)
            f << ",x" << k << ",y" << k << ",err_stage" << k << "_mm";
        f << ",failed\n";
        std::vector<double> finals;
        for (std::size_t t = 0; t < o.trials; ++t)
        {
            Rng rng = make_rng(l.seed, StreamTag::cli, t);
            const TrialRecord r = run_trial(l.scene, x, spec.eps.front(), spec.sigma_p.front(), spec.sigma_o.front(),
                                            corr.get(), spec.random_heading, spec.refine, rng);
            f << t << ',' << fmt(x.x(), 12) << ',' << fmt(x.y(), 12) << ',' << fmt(r.truth.heading, 12);
            for (std::size_t k = 0; k <= l.scene.band_count(); ++k)
            {
                if (k < r.estimates.size())
                    f << ',' << fmt(r.estimates[k].x(), 12) << ',' << fmt(r.estimates[k].y(), 12) << ','
                      << fmt(r.errors[k] * 1e3, 12);
                else
                    f << ",,,";
            }
            f << ',' << (r.failed ? 1 : 0) << '\n';
            finals.push_back(r.final_error());
        }
        print_summary("refine", finals);
        return 0;
    }

    int cmd_baseline(const Options& o)
    {
        const Loaded l = load(o);
        const ExperimentSpec spec = experiment(l, o);
        const BaselineConfig cfg = parse_baseline_config(l.root);
        const auto traj = o.trajectory.empty() ? loop_trajectory(l.scene) : load_trajectory(o.trajectory, l.scene);
        const auto corr = correction_for(l, o);
        const auto recs =
            run_tracking(l.scene, traj, cfg, corr.get(), l.seed, spec.sigma_p.front(), o.threads, spec.refine);
        auto f = open_out(o, "tracking.csv");
        write_tracking_csv(f, recs);
        std::vector<double> kf, ref;
        for (const auto& r : recs)
        {
            kf.push_back(r.baseline_error);
            ref.push_back(r.refined_error);
        }
        print_summary("baseline", kf);
        print_summary("refined", ref);
        return 0;
    }

    int cmd_evaluate(const Options& o)
    {
        const Loaded l = load(o);
        const ExperimentSpec spec = experiment(l, o);
        const auto recs = run_experiment(l.scene, spec);
        {
            auto f = open_out(o, "records.csv");
            write_records_csv(f, recs, l.scene.band_count() + 1);
        }
        {
            auto f = open_out(o, "summary.json");
            f << summary_json(summarize(recs)).dump(2) << '\n';
        }
        std::vector<double> finals;
        for (const auto& r : recs)
            finals.push_back(r.final_error());
        print_summary("evaluate", finals);
        return 0;
    }

    int cmd_dump_likelihood(const Options& o)
    {
        const Loaded l = load(o);
        const ExperimentSpec spec = experiment(l, o);
        const Band& band = pick_band(l.scene, o.band);
        const Vec3 x = position_of(l, o);
        Rng rng = make_rng(l.seed, StreamTag::cli, 0);
        const Pose pose(x, 0.0);
        const auto obs = simulate_observation(l.scene, pose, rng, spec.sigma_p.front());
        const auto diffs = differences_for(l.scene, obs);
        std::size_t k = 0;
        while (l.scene.bands[k].index != band.index)
            ++k;
        const auto corr = correction_for(l, o);
        const double sigma = spec.refine.sigma.empty() ? band.likelihood_sigma : spec.refine.sigma[k];
        const auto q = stage_query(l.scene, band, diffs[k], 0.0, x, corr.get(), sigma, spec.refine);
        const auto field = evaluate_field(q);
        auto f = open_out(o, "likelihood_band" + std::to_string(band.index) + ".csv");
        write_csv(f, field);
        std::vector<double> d;
        for (const auto& p : field.peaks)
            d.push_back((p.position - x).norm());
        std::printf("dump-likelihood: band %zu, %zu grid values, %zu peaks, nearest peak %.4f mm from truth\n",
                    band.index, field.values.size(), field.peaks.size(),
                    d.empty() ? 0.0 : *std::min_element(d.begin(), d.end()) * 1e3);
        return 0;
    }
} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-band carrier-phase localization simulator"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("scenario", o.scenario, "Scenario JSON file")->required();
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--seed", o.seed, "Master seed (default: the scenario's)");
        sub->add_option("--threads", o.threads, "Worker threads (default: PHASELOC_THREADS or all cores)");
        sub->add_option("--set", o.overrides, "Scenario override dotted.key=value (repeatable)");
        sub->add_option("--eps-mm", o.eps_mm, "Median initial error(s), mm");
        sub->add_option("--sigma-p-deg", o.sigma_p_deg, "Extra phase noise(s), degrees");
        sub->add_option("--sigma-o-deg", o.sigma_o_deg, "Orientation noise(s), degrees");
        sub->add_option("--nc", o.nc, "Calibration point count(s); switches to fitted calibration");
        sub->add_option("--calibration", o.calibration, "Calibration bundle written by 'calibrate'");
    };

    auto* simulate = app.add_subcommand("simulate", "Simulate phase observations");
    common(simulate);
    simulate->add_option("--at", o.at, "Single position x,y in metres (default: experiment grid)");

    auto* calibrate = app.add_subcommand("calibrate", "Fit calibration surfaces and write calibration.json");
    common(calibrate);

    auto* refine_cmd = app.add_subcommand("refine", "Refine from a synthetic initial estimate at one position");
    common(refine_cmd);
    refine_cmd->add_option("--at", o.at, "Position x,y in metres (default: area centre)");
    refine_cmd->add_option("--trials", o.trials, "Number of trials")->check(CLI::PositiveNumber);

    auto* baseline = app.add_subcommand("baseline", "Track a trajectory with the TDoA + Kalman baseline and refine");
    common(baseline);
    baseline->add_option("--trajectory", o.trajectory, "CSV t_s,x_m,y_m,heading_rad (default: built-in loop)");

    auto* evaluate = app.add_subcommand("evaluate", "Monte-Carlo sweep; writes records.csv and summary.json");
    common(evaluate);

    auto* dump = app.add_subcommand("dump-likelihood", "Write one band's likelihood field around a position");
    common(dump);
    dump->add_option("--band", o.band, "Band number, 1-based (default: last)");
    dump->add_option("--at", o.at, "Position x,y in metres (default: area centre)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        return 1;
    }

    try
    {
        if (*simulate)
            return cmd_simulate(o);
        if (*calibrate)
            return cmd_calibrate(o);
        if (*refine_cmd)
            return cmd_refine(o);
        if (*baseline)
            return cmd_baseline(o);
        if (*evaluate)
            return cmd_evaluate(o);
        if (*dump)
            return cmd_dump_likelihood(o);
    }
    catch (const ValidationError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
