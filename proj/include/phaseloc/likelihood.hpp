// SPDX-License-Identifier: Apache-2.0
//
// Location likelihood of one band: a product of wrapped-Gaussian densities of
// the phase-difference residuals, evaluated in the log domain on a grid, with
// local maxima refined by coordinate descent.

#ifndef PHASELOC_LIKELIHOOD_HPP
#define PHASELOC_LIKELIHOOD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "phase_model.hpp"
#include "scene.hpp"

namespace phaseloc
{
    /// Number of 2 pi shifts kept on each side of the central term.
    inline int wrapped_gaussian_terms(double sigma) { return static_cast<int>(std::ceil(4.0 * sigma / kTwoPi)) + 1; }

    inline double wrapped_gaussian_logpdf(double residual, double sigma, int terms)
    {
        const double r = wrap(residual);
        const double inv2s2 = 0.5 / (sigma * sigma);
        const double e0 = -r * r * inv2s2;
        double emax = e0;
        for (int i = -terms; i <= terms; ++i)
        {
            const double t = r + kTwoPi * i;
            emax = std::max(emax, -t * t * inv2s2);
        }
        double rest = 0.0;
        bool centre_taken = false;
        for (int i = -terms; i <= terms; ++i)
        {
            const double t = r + kTwoPi * i;
            const double e = -t * t * inv2s2;
            if (!centre_taken && e == emax)
            {
                centre_taken = true;
                continue;
            }
            rest += std::exp(e - emax);
        }
        return emax + std::log1p(rest) - std::log(sigma * std::sqrt(kTwoPi));
    }

    /// log sum_{i=-M..M} N(residual + 2 pi i; 0, sigma^2), M = ceil(4 sigma / 2 pi) + 1.
    inline double wrapped_gaussian_logpdf(double residual, double sigma)
    {
        if (!(sigma > 0.0))
            throw ValidationError("wrapped_gaussian_logpdf: sigma must be > 0");
        return wrapped_gaussian_logpdf(residual, sigma, wrapped_gaussian_terms(sigma));
    }

    struct LikelihoodQuery
    {
        const Band* band = nullptr;
        PhaseDifferences observation;
        double heading = 0.0;
        const PhaseCorrection* correction = nullptr; // null means none
        double sigma = deg2rad(15.0);
        Vec3 center = Vec3::Zero();
        Vec3 half_extent = Vec3::Zero(); // z ignored for planar queries
        double step = 0.0;
        bool planar = true;
    };

    /// Precomputed evaluator for one query.
    class LikelihoodEvaluator
    {
    public:
        explicit LikelihoodEvaluator(const LikelihoodQuery& q) : q_(q)
        {
            if (!q.band)
                throw ValidationError("likelihood query without band");
            if (!(q.sigma > 0.0))
                throw ValidationError("likelihood sigma must be > 0");
            const Band& b = *q.band;
            pairs_ = b.pair_anchors();
            if (q.observation.deltas.size() != pairs_.size())
                throw ValidationError("likelihood: observation has " + std::to_string(q.observation.deltas.size()) +
                                      " deltas, band " + std::to_string(b.index) + " needs " +
                                      std::to_string(pairs_.size()));
            if (q.observation.band_index != b.index)
                throw ValidationError("likelihood: observation belongs to band " +
                                      std::to_string(q.observation.band_index));
            offset_ = tx_antenna_position(Pose(Vec3::Zero(), q.heading), b);
            k_ = kTwoPi * b.frequency_hz / kSpeedOfLight;
            terms_ = wrapped_gaussian_terms(q.sigma);
        }

        double operator()(const Vec3& x, bool* out_of_hull = nullptr) const
        {
            const Band& b = *q_.band;
            const Vec3 tx = x + offset_;
            const double dref = (b.anchors[b.reference_index] - tx).norm();
            double sum = 0.0;
            bool outside = false;
            for (std::size_t p = 0; p < pairs_.size(); ++p)
            {
                double omega = k_ * ((b.anchors[pairs_[p]] - tx).norm() - dref);
                if (q_.correction)
                {
                    bool o = false;
                    omega += q_.correction->pair_correction(b, p, tx, &o);
                    outside = outside || o;
                }
                sum += wrapped_gaussian_logpdf(omega - q_.observation.deltas[p], q_.sigma, terms_);
            }
            if (out_of_hull)
                *out_of_hull = outside;
            return sum;
        }

        const LikelihoodQuery& query() const noexcept { return q_; }

    private:
        LikelihoodQuery q_;
        std::vector<std::size_t> pairs_;
        Vec3 offset_;
        double k_ = 0.0;
        int terms_ = 2;
    };

    inline double log_likelihood(const LikelihoodQuery& q, const Vec3& x) { return LikelihoodEvaluator(q)(x); }

    struct Peak
    {
        Vec3 position = Vec3::Zero();
        double value = 0.0;
    };

    struct LikelihoodField
    {
        Vec3 origin = Vec3::Zero(); // grid point (0, 0, 0)
        double step = 0.0;
        std::array<std::size_t, 3> size{1, 1, 1};
        std::vector<double> values; // x fastest, then y, then z
        std::vector<Peak> peaks;    // refined, sorted by value descending
        bool out_of_hull = false;
        bool boundary_peak = false; // no interior maximum; the grid maximum was used

        Vec3 point(std::size_t i, std::size_t j, std::size_t l) const
        {
            return origin + step * Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(l));
        }
        double at(std::size_t i, std::size_t j, std::size_t l = 0) const
        {
            return values[(l * size[1] + j) * size[0] + i];
        }
    };

    /// Largest spacing between likelihood peaks suggested by the local geometry:
    /// lambda over the smallest singular value of the Jacobian of the range
    /// differences, capped at 20 wavelengths for near-degenerate layouts.
    inline double peak_spacing_estimate(const Band& band, const Vec3& tx, bool planar)
    {
        const auto pairs = band.pair_anchors();
        const int dims = planar ? 2 : 3;
        Eigen::MatrixXd g(static_cast<Eigen::Index>(pairs.size()), dims);
        const Vec3 ur = (tx - band.anchors[band.reference_index]).normalized();
        for (std::size_t p = 0; p < pairs.size(); ++p)
        {
            const Vec3 un = (tx - band.anchors[pairs[p]]).normalized();
            const Vec3 d = un - ur;
            for (int c = 0; c < dims; ++c)
                g(static_cast<Eigen::Index>(p), c) = d(c);
        }
        const double smin = Eigen::JacobiSVD<Eigen::MatrixXd>(g).singularValues().minCoeff();
        const double lambda = band.wavelength();
        const double cap = 20.0 * lambda;
        return smin * cap > lambda ? lambda / smin : cap;
    }

    namespace detail
    {
        inline Vec3 clamp_to_box(const Vec3& x, const Vec3& lo, const Vec3& hi)
        {
            return x.cwiseMax(lo).cwiseMin(hi);
        }
    } // namespace detail

    /// Derivative-free refinement: try +-h along each axis, keep improvements,
    /// halve h when none helps; stops below step / 1024 or after 20 halvings.
    inline Peak refine_peak(const LikelihoodEvaluator& f, Peak start, double step, const Vec3& lo, const Vec3& hi,
                            int dims)
    {
        double h = 0.5 * step;
        const double floor = step / 1024.0;
        for (int halving = 0; halving < 20 && h >= floor; ++halving, h *= 0.5)
        {
            bool improved = true;
            while (improved)
            {
                improved = false;
                for (int axis = 0; axis < dims; ++axis)
                    for (double sgn : {1.0, -1.0})
                    {
                        Vec3 cand = start.position;
                        cand(axis) += sgn * h;
                        cand = detail::clamp_to_box(cand, lo, hi);
                        const double v = f(cand);
                        if (v > start.value)
                        {
                            start = {cand, v};
                            improved = true;
                        }
                    }
            }
        }
        return start;
    }

    inline bool peak_before(const Peak& a, const Peak& b)
    {
        if (a.value != b.value)
            return a.value > b.value;
        for (int c = 0; c < 3; ++c)
            if (a.position(c) != b.position(c))
                return a.position(c) < b.position(c);
        return false;
    }

    /// Dense grid over the box (centre on the grid), interior local maxima,
    /// each refined, sorted by value.
    inline LikelihoodField evaluate_field(const LikelihoodQuery& q)
    {
        if (!(q.step > 0.0))
            throw ValidationError("likelihood grid step must be > 0");
        const LikelihoodEvaluator f(q);
        const int dims = q.planar ? 2 : 3;
        LikelihoodField field;
        field.step = q.step;
        std::array<std::size_t, 3> half{0, 0, 0};
        for (int c = 0; c < dims; ++c)
        {
            half[c] = static_cast<std::size_t>(std::floor(q.half_extent(c) / q.step + 1e-9));
            if (half[c] < 1)
                throw ValidationError("likelihood search box must span at least 2 grid points per axis");
            field.size[c] = 2 * half[c] + 1;
        }
        field.origin = q.center;
        for (int c = 0; c < dims; ++c)
            field.origin(c) -= static_cast<double>(half[c]) * q.step;
        const Vec3 lo = field.origin;
        Vec3 hi = q.center;
        for (int c = 0; c < dims; ++c)
            hi(c) += static_cast<double>(half[c]) * q.step;

        const auto [nx, ny, nz] = field.size;
        field.values.resize(nx * ny * nz);
        for (std::size_t l = 0; l < nz; ++l)
            for (std::size_t j = 0; j < ny; ++j)
                for (std::size_t i = 0; i < nx; ++i)
                {
                    bool o = false;
                    field.values[(l * ny + j) * nx + i] = f(field.point(i, j, l), &o);
                    field.out_of_hull = field.out_of_hull || o;
                }

        // Neighbour offsets, with the sign of the comparison: strictly greater
        // than neighbours that come earlier in storage order, >= later ones.
        std::vector<std::array<int, 3>> offsets;
        for (int dl = (dims == 3 ? -1 : 0); dl <= (dims == 3 ? 1 : 0); ++dl)
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di)
                    if (di || dj || dl)
                        offsets.push_back({di, dj, dl});

        std::vector<Peak> grid_peaks;
        const std::size_t lz0 = dims == 3 ? 1 : 0, lz1 = dims == 3 ? nz - 1 : 1;
        for (std::size_t l = lz0; l < lz1; ++l)
            for (std::size_t j = 1; j + 1 < ny; ++j)
                for (std::size_t i = 1; i + 1 < nx; ++i)
                {
                    const double v = field.at(i, j, l);
                    bool is_peak = true;
                    for (const auto& o : offsets)
                    {
                        const double nv = field.at(i + o[0], j + o[1], l + o[2]);
                        const bool earlier = o[2] < 0 || (o[2] == 0 && (o[1] < 0 || (o[1] == 0 && o[0] < 0)));
                        if (earlier ? !(v > nv) : !(v >= nv))
                        {
                            is_peak = false;
                            break;
                        }
                    }
                    if (is_peak)
                        grid_peaks.push_back({field.point(i, j, l), v});
                }

        if (grid_peaks.empty())
        {
            const auto it = std::max_element(field.values.begin(), field.values.end());
            const auto mn = std::min_element(field.values.begin(), field.values.end());
            if (*it == *mn)
                throw NoPeakError("likelihood field is constant over the search box");
            const std::size_t idx = static_cast<std::size_t>(it - field.values.begin());
            grid_peaks.push_back({field.point(idx % nx, (idx / nx) % ny, idx / (nx * ny)), *it});
            field.boundary_peak = true;
        }

        field.peaks.reserve(grid_peaks.size());
        for (const auto& p : grid_peaks)
            field.peaks.push_back(refine_peak(f, p, q.step, lo, hi, dims));
        std::sort(field.peaks.begin(), field.peaks.end(), peak_before);
        return field;
    }

    /// Planar CSV (x, y, loglik); 3D fields add a z column.
    inline void write_csv(std::ostream& os, const LikelihoodField& field)
    {
        const bool three_d = field.size[2] > 1;
        os << (three_d ? "x_m,y_m,z_m,loglik\n" : "x_m,y_m,loglik\n");
        os.precision(17);
        for (std::size_t l = 0; l < field.size[2]; ++l)
            for (std::size_t j = 0; j < field.size[1]; ++j)
                for (std::size_t i = 0; i < field.size[0]; ++i)
                {
                    const Vec3 p = field.point(i, j, l);
                    os << p.x() << ',' << p.y() << ',';
                    if (three_d)
                        os << p.z() << ',';
                    os << field.at(i, j, l) << '\n';
                }
    }
} // namespace phaseloc

#endif // PHASELOC_LIKELIHOOD_HPP
