// SPDX-License-Identifier: Apache-2.0
//
// Iterative cross-band refinement: each band's likelihood is searched around
// the previous estimate and the peak closest to it becomes the next estimate.
// Also the scalar integer-ambiguity helper.

#ifndef PHASELOC_REFINE_HPP
#define PHASELOC_REFINE_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "core.hpp"
#include "likelihood.hpp"
#include "phase_model.hpp"
#include "scene.hpp"

namespace phaseloc
{
    struct StageInfo
    {
        double log_likelihood = 0.0;
        double peak_margin = std::numeric_limits<double>::infinity(); // to the next-nearest peak
        std::size_t peak_count = 0;
        bool out_of_hull = false;
        bool weak_peak = false;
        bool boundary_peak = false;
    };

    struct RefinementResult
    {
        std::vector<Vec3> estimates; // x_0 ... x_K
        std::vector<StageInfo> stages; // one per band
    };

    struct RefineOptions
    {
        double step_fraction = 1.0 / 20.0;  // grid step in wavelengths
        double box_factor = 1.2;            // half-extent in peak spacings
        std::vector<double> sigma;          // per band; empty means each band's likelihood_sigma
        // Local maxima whose log-likelihood is below that of all residuals sitting
        // at this many sigmas are not candidates (they carry essentially no
        // probability). Zero or negative disables the floor.
        double significance_sigmas = 0.0;
    };

    /// Picks the peak closest to `anchor`; ties go to the higher likelihood, then
    /// to the lexicographically smaller position.
    inline std::size_t nearest_peak(const std::vector<Peak>& peaks, const Vec3& anchor)
    {
        if (peaks.empty())
            throw NoPeakError("no likelihood peaks to choose from");
        std::size_t best = 0;
        double bd = (peaks[0].position - anchor).norm();
        for (std::size_t i = 1; i < peaks.size(); ++i)
        {
            const double d = (peaks[i].position - anchor).norm();
            if (d < bd || (d == bd && peak_before(peaks[i], peaks[best])))
            {
                best = i;
                bd = d;
            }
        }
        return best;
    }

    /// The search query for band `band` around `center`, sized by the local
    /// peak spacing.
    inline LikelihoodQuery stage_query(const Scene& scene, const Band& band, const PhaseDifferences& obs,
                                       double heading, const Vec3& center, const PhaseCorrection* correction,
                                       double sigma, const RefineOptions& opt = {})
    {
        LikelihoodQuery q;
        q.band = &band;
        q.observation = obs;
        q.heading = heading;
        q.correction = correction;
        q.sigma = sigma;
        q.planar = scene.planar;
        q.center = center;
        if (scene.planar)
            q.center.z() = scene.target_plane_height;
        q.step = opt.step_fraction * band.wavelength();
        const Vec3 tx = tx_antenna_position(Pose(q.center, heading), band);
        const double half = opt.box_factor * peak_spacing_estimate(band, tx, scene.planar);
        q.half_extent = Vec3(half, half, scene.planar ? 0.0 : half);
        return q;
    }

    inline RefinementResult refine(const Scene& scene, const std::vector<PhaseDifferences>& observations,
                                   double heading, const Vec3& initial, const PhaseCorrection* correction,
                                   const RefineOptions& opt = {})
    {
        if (observations.size() != scene.band_count())
            throw ValidationError("refine: expected one observation per band");
        if (!initial.allFinite())
            throw ValidationError("refine: initial estimate is not finite");
        if (!opt.sigma.empty() && opt.sigma.size() != scene.band_count())
            throw ValidationError("refine: sigma must have one value per band");
        RefinementResult res;
        res.estimates.reserve(scene.band_count() + 1);
        Vec3 x = initial;
        if (scene.planar)
            x.z() = scene.target_plane_height;
        res.estimates.push_back(x);
        for (std::size_t k = 0; k < scene.band_count(); ++k)
        {
            const Band& band = scene.bands[k];
            if (observations[k].band_index != band.index)
                throw ValidationError("refine: observation " + std::to_string(k) + " does not belong to band " +
                                      std::to_string(band.index));
            const double sigma = opt.sigma.empty() ? band.likelihood_sigma : opt.sigma[k];
            const auto q = stage_query(scene, band, observations[k], heading, x, correction, sigma, opt);
            const auto field = evaluate_field(q);
            const double pairs = static_cast<double>(band.anchor_count() - 1);
            std::vector<Peak> candidates;
            if (opt.significance_sigmas > 0.0)
            {
                const double floor = pairs * wrapped_gaussian_logpdf(opt.significance_sigmas * sigma, sigma);
                for (const auto& p : field.peaks)
                    if (p.value >= floor)
                        candidates.push_back(p);
            }
            if (candidates.empty())
                candidates = field.peaks;
            const std::size_t pick = nearest_peak(candidates, x);
            const Peak chosen = candidates[pick];

            StageInfo info;
            info.log_likelihood = chosen.value;
            info.peak_count = candidates.size();
            info.out_of_hull = field.out_of_hull;
            info.boundary_peak = field.boundary_peak;
            for (std::size_t i = 0; i < candidates.size(); ++i)
                if (i != pick)
                    info.peak_margin = std::min(info.peak_margin, (candidates[i].position - chosen.position).norm());
            // Weaker than every residual sitting at two standard deviations.
            const double weak = pairs * wrapped_gaussian_logpdf(2.0 * sigma, sigma);
            info.weak_peak = chosen.value < weak;
            res.stages.push_back(info);

            x = chosen.position;
            res.estimates.push_back(x);
        }
        return res;
    }

    struct AmbiguityResolution
    {
        long long k = 0;
        double range = 0.0;
    };

    /// d = (k + phi / 2 pi) lambda with the unique integer k that keeps d within
    /// initial +- uncertainty.
    inline AmbiguityResolution resolve_ambiguity_1d(double initial, double uncertainty, double wavelength_m,
                                                    double fractional_phase)
    {
        if (!(wavelength_m > 0.0) || !(uncertainty >= 0.0))
            throw ValidationError("resolve_ambiguity_1d: wavelength must be > 0 and uncertainty >= 0");
        if (uncertainty > 0.5 * wavelength_m)
            throw AmbiguityError("resolve_ambiguity_1d: uncertainty exceeds half a wavelength, k is not unique");
        const double frac = fractional_phase / kTwoPi;
        const long long k0 = std::llround(initial / wavelength_m - frac);
        std::vector<long long> feasible;
        for (long long k = k0 - 1; k <= k0 + 1; ++k)
        {
            const double d = (static_cast<double>(k) + frac) * wavelength_m;
            if (std::abs(d - initial) <= uncertainty * (1.0 + 1e-12))
                feasible.push_back(k);
        }
        if (feasible.empty())
            throw AmbiguityError("resolve_ambiguity_1d: no integer k is consistent with the initial range");
        if (feasible.size() > 1)
            throw AmbiguityError("resolve_ambiguity_1d: several integers k are consistent with the initial range");
        return {feasible.front(), (static_cast<double>(feasible.front()) + frac) * wavelength_m};
    }
} // namespace phaseloc

#endif // PHASELOC_REFINE_HPP
