// SPDX-License-Identifier: Apache-2.0
//
// Closed-form wrapped-phase forward model, phase differences against the
// reference anchor, and the observation simulator.

#ifndef PHASELOC_PHASE_MODEL_HPP
#define PHASELOC_PHASE_MODEL_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "channel.hpp"
#include "core.hpp"
#include "rng.hpp"
#include "scene.hpp"

namespace phaseloc
{
    struct PhaseObservation
    {
        std::size_t band_index = 0;
        std::vector<double> phases; // one per anchor
        double timestamp = 0.0;
    };

    /// Deltas ordered like Band::pair_anchors().
    struct PhaseDifferences
    {
        std::size_t band_index = 0;
        std::vector<double> deltas;
    };

    /// Unwrapped propagation phase 2 pi f d / c to the nominal anchor.
    inline double geometric_phase(const Band& band, std::size_t anchor_index, const Vec3& tx)
    {
        return kTwoPi * band.frequency_hz * (band.anchors[anchor_index] - tx).norm() / kSpeedOfLight;
    }

    inline double model_phase(const Band& band, std::size_t anchor_index, const Pose& pose, double offset,
                              double gamma, double noise)
    {
        const Vec3 tx = tx_antenna_position(pose, band);
        return wrap(geometric_phase(band, anchor_index, tx) + offset + gamma + noise);
    }

    inline PhaseDifferences phase_differences(const PhaseObservation& obs, std::size_t reference_index)
    {
        if (obs.phases.size() < 2)
            throw ValidationError("phase_differences: need at least 2 phases");
        if (reference_index >= obs.phases.size())
            throw ValidationError("phase_differences: reference index out of range");
        PhaseDifferences d;
        d.band_index = obs.band_index;
        d.deltas.reserve(obs.phases.size() - 1);
        const double ref = obs.phases[reference_index];
        for (std::size_t n = 0; n < obs.phases.size(); ++n)
            if (n != reference_index)
                d.deltas.push_back(wrap(obs.phases[n] - ref));
        return d;
    }

    inline PhaseDifferences phase_differences(const PhaseObservation& obs, const Band& band)
    {
        if (obs.phases.size() != band.anchor_count())
            throw ValidationError("phase_differences: observation length does not match band " +
                                  std::to_string(band.index));
        return phase_differences(obs, band.reference_index);
    }

    /// Correction gamma_n(x_k) - gamma_ref(x_k) added to the modelled phase
    /// difference. Implementations: none, exact (the simulator's ground truth),
    /// or a fitted calibration bundle.
    class PhaseCorrection
    {
    public:
        virtual ~PhaseCorrection() = default;
        /// `pair` indexes Band::pair_anchors(). Sets *out_of_hull when the
        /// query lies outside the data the correction was fitted on.
        virtual double pair_correction(const Band& band, std::size_t pair, const Vec3& tx,
                                       bool* out_of_hull = nullptr) const = 0;
    };

    class NoCorrection final : public PhaseCorrection
    {
    public:
        double pair_correction(const Band&, std::size_t, const Vec3&, bool* out_of_hull) const override
        {
            if (out_of_hull)
                *out_of_hull = false;
            return 0.0;
        }
    };

    class ExactCorrection final : public PhaseCorrection
    {
    public:
        double pair_correction(const Band& band, std::size_t pair, const Vec3& tx, bool* out_of_hull) const override
        {
            if (out_of_hull)
                *out_of_hull = false;
            const std::size_t n = pair < band.reference_index ? pair : pair + 1;
            return band.systematic_phase(n, tx) - band.systematic_phase(band.reference_index, tx);
        }
    };

    /// Modelled phase difference Omega_n(x) for one pair, without the correction.
    inline double geometric_difference(const Band& band, std::size_t n, const Vec3& tx)
    {
        const double dd = (band.anchors[n] - tx).norm() - (band.anchors[band.reference_index] - tx).norm();
        return kTwoPi * band.frequency_hz * dd / kSpeedOfLight;
    }

    /// One observation per band. A fresh uniform offset is drawn per band and
    /// call; noise is i.i.d. Gaussian per anchor with the band's sigma plus
    /// `sigma_p_extra`. With the CIR chain the band noise is split over the
    /// DM-RS symbols (sigma * sqrt(S) each) and circular-averaged.
    inline std::vector<PhaseObservation> simulate_observation(const Scene& scene, const Pose& pose, Rng& rng,
                                                              double sigma_p_extra = 0.0, double timestamp = 0.0)
    {
        std::vector<PhaseObservation> out;
        out.reserve(scene.band_count());
        const bool cir = scene.uses_cir();
        for (const Band& band : scene.bands)
        {
            PhaseObservation obs;
            obs.band_index = band.index;
            obs.timestamp = timestamp;
            obs.phases.resize(band.anchor_count());
            const double offset = wrap(draw_uniform(rng, -kPi, kPi));
            const Vec3 tx = tx_antenna_position(pose, band);
            for (std::size_t n = 0; n < band.anchor_count(); ++n)
            {
                const double gamma = band.systematic_phase(n, tx);
                if (!cir)
                {
                    const double w = draw_normal(rng, band.phase_noise_sigma) + draw_normal(rng, sigma_p_extra);
                    obs.phases[n] = model_phase(band, n, pose, offset, gamma, w);
                    continue;
                }
                // The CIR chain works on true anchor geometry; strip the
                // anchor-error part of gamma so it is not applied twice.
                double cable_and_bias = gamma;
                if (!band.anchor_errors.empty())
                    cable_and_bias -= kTwoPi * band.frequency_hz *
                                      ((band.true_anchor(n) - tx).norm() - (band.anchors[n] - tx).norm()) /
                                      kSpeedOfLight;
                const double clean = measure_phase_cir(scene, band, n, pose, offset + cable_and_bias, rng);
                std::vector<double> symbols(scene.dmrs_symbols);
                const double per_symbol = band.phase_noise_sigma * std::sqrt(static_cast<double>(scene.dmrs_symbols));
                for (auto& s : symbols)
                    s = clean + draw_normal(rng, per_symbol);
                obs.phases[n] = wrap(circular_mean(symbols) + draw_normal(rng, sigma_p_extra));
            }
            out.push_back(std::move(obs));
        }
        return out;
    }

    inline std::vector<PhaseDifferences> differences_for(const Scene& scene, const std::vector<PhaseObservation>& obs)
    {
        if (obs.size() != scene.band_count())
            throw ValidationError("observation count does not match band count");
        std::vector<PhaseDifferences> out;
        for (std::size_t k = 0; k < obs.size(); ++k)
            out.push_back(phase_differences(obs[k], scene.bands[k]));
        return out;
    }
} // namespace phaseloc

#endif // PHASELOC_PHASE_MODEL_HPP
