// SPDX-License-Identifier: Apache-2.0
//
// Channel synthesis (LoS plus single-bounce specular reflections), CIR
// reconstruction by upsampled IDFT, and LoS phase extraction.

#ifndef PHASELOC_CHANNEL_HPP
#define PHASELOC_CHANNEL_HPP

#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

#include "core.hpp"
#include "rng.hpp"
#include "scene.hpp"

namespace phaseloc
{
    using cdouble = std::complex<double>;

    struct ChannelFrequencyResponse
    {
        std::vector<double> frequencies; // absolute RF, Hz
        std::vector<cdouble> samples;
        std::size_t band_index = 0;

        double spacing() const { return frequencies[1] - frequencies[0]; }
        double center() const { return 0.5 * (frequencies.front() + frequencies.back()); }
    };

    /// Delay grid t_l = l / (U * N * spacing). Sample phases refer to the band
    /// centre frequency: a single path of delay tau gives exp(-j 2 pi f_c tau)
    /// times a real, positive main lobe.
    struct ChannelImpulseResponse
    {
        std::vector<double> delays;
        std::vector<cdouble> samples;
        std::size_t upsampling_factor = 32;
    };

    struct PropagationPath
    {
        double length = 0.0; // m
        double gain = 1.0;
    };

    /// Subcarrier frequencies placed symmetrically around the carrier.
    inline std::vector<double> subcarrier_frequencies(const Band& band)
    {
        const std::size_t n = band.subcarrier_count();
        std::vector<double> f(n);
        const double mid = 0.5 * static_cast<double>(n - 1);
        for (std::size_t m = 0; m < n; ++m)
            f[m] = band.frequency_hz + (static_cast<double>(m) - mid) * band.subcarrier_spacing_hz;
        return f;
    }

    inline Vec3 mirror_point(const Vec3& p, const Reflector& r)
    {
        return p - 2.0 * (p - r.point).dot(r.normal) * r.normal;
    }

    /// LoS plus one image-method bounce per reflector. A reflector contributes
    /// only when both endpoints lie strictly on the same side of its plane.
    inline std::vector<PropagationPath> propagation_paths(const Scene& scene, const Vec3& anchor, const Vec3& tx)
    {
        std::vector<PropagationPath> paths;
        paths.push_back({(anchor - tx).norm(), 1.0});
        for (const auto& r : scene.reflectors)
        {
            const double sa = (anchor - r.point).dot(r.normal);
            const double st = (tx - r.point).dot(r.normal);
            if (sa * st <= 0.0)
                continue;
            paths.push_back({(anchor - mirror_point(tx, r)).norm(), r.inv_alpha});
        }
        return paths;
    }

    /// CFR = sum_p g_p exp(-j 2 pi f d_p / c) exp(j offset). Geometry uses the
    /// true anchor position. Optional complex white noise at `snr_db` (per
    /// subcarrier, relative to unit LoS power); infinity disables it.
    inline ChannelFrequencyResponse synthesize_cfr(const Scene& scene, const Band& band, std::size_t anchor_index,
                                                   const Pose& pose, double offset, Rng& rng,
                                                   double snr_db = std::numeric_limits<double>::infinity())
    {
        if (anchor_index >= band.anchor_count())
            throw std::out_of_range("synthesize_cfr: anchor index out of range");
        ChannelFrequencyResponse cfr;
        cfr.band_index = band.index;
        cfr.frequencies = subcarrier_frequencies(band);
        cfr.samples.assign(cfr.frequencies.size(), cdouble(0.0, 0.0));
        const Vec3 tx = tx_antenna_position(pose, band);
        const auto paths = propagation_paths(scene, band.true_anchor(anchor_index), tx);
        for (const auto& p : paths)
        {
            if (p.gain == 0.0)
                continue;
            for (std::size_t m = 0; m < cfr.frequencies.size(); ++m)
                cfr.samples[m] += p.gain * std::polar(1.0, -kTwoPi * cfr.frequencies[m] * p.length / kSpeedOfLight);
        }
        const cdouble rot = std::polar(1.0, offset);
        for (auto& s : cfr.samples)
            s *= rot;
        if (std::isfinite(snr_db))
        {
            const double sigma = std::sqrt(0.5 * std::pow(10.0, -snr_db / 10.0));
            for (auto& s : cfr.samples)
            {
                const double re = draw_normal(rng, sigma);
                const double im = draw_normal(rng, sigma);
                s += cdouble(re, im);
            }
        }
        return cfr;
    }

    namespace detail
    {
        // One backward plan per transform length. Plans are created once under a
        // lock and executed with the new-array interface, which is thread safe.
        class IdftPlans
        {
        public:
            static IdftPlans& instance()
            {
                static IdftPlans p;
                return p;
            }

            void execute(std::vector<cdouble>& in, std::vector<cdouble>& out)
            {
                fftw_plan plan = get(in.size());
                fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()),
                                 reinterpret_cast<fftw_complex*>(out.data()));
            }

            ~IdftPlans()
            {
                for (auto& [n, p] : plans_)
                    fftw_destroy_plan(p);
            }

        private:
            fftw_plan get(std::size_t n)
            {
                std::lock_guard<std::mutex> lock(mutex_);
                auto it = plans_.find(n);
                if (it != plans_.end())
                    return it->second;
                std::vector<cdouble> a(n), b(n);
                fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(a.data()),
                                               reinterpret_cast<fftw_complex*>(b.data()), FFTW_BACKWARD,
                                               FFTW_ESTIMATE | FFTW_UNALIGNED);
                if (!p)
                    throw std::runtime_error("fftw plan creation failed");
                plans_.emplace(n, p);
                return p;
            }

            std::mutex mutex_;
            std::map<std::size_t, fftw_plan> plans_;
        };
    } // namespace detail

    /// Zero-padded inverse DFT of length U*N scaled by 1/N, so a unit-magnitude
    /// single path peaks at |h| = 1. Energy: sum |h|^2 = (U / N) * sum |H|^2.
    inline ChannelImpulseResponse cfr_to_cir(const ChannelFrequencyResponse& cfr, std::size_t upsampling_factor = 32)
    {
        const std::size_t n = cfr.samples.size();
        if (n < 2 || cfr.frequencies.size() != n)
            throw ValidationError("cfr_to_cir: CFR needs at least 2 samples and matching frequencies");
        if (upsampling_factor < 1)
            throw ValidationError("cfr_to_cir: upsampling factor must be >= 1");
        const double df = cfr.spacing();
        for (std::size_t m = 1; m < n; ++m)
            if (std::abs((cfr.frequencies[m] - cfr.frequencies[m - 1]) - df) > 1e-6 * std::abs(df) || !(df > 0.0))
                throw ValidationError("cfr_to_cir: subcarrier grid must be strictly increasing and uniform");

        const std::size_t len = upsampling_factor * n;
        std::vector<cdouble> in(len, cdouble(0.0, 0.0)), out(len);
        std::copy(cfr.samples.begin(), cfr.samples.end(), in.begin());
        detail::IdftPlans::instance().execute(in, out);

        ChannelImpulseResponse cir;
        cir.upsampling_factor = upsampling_factor;
        cir.delays.resize(len);
        cir.samples.resize(len);
        const double inv_n = 1.0 / static_cast<double>(n);
        const double half = static_cast<double>(n - 1);
        for (std::size_t l = 0; l < len; ++l)
        {
            const double frac = static_cast<double>(l) / static_cast<double>(len);
            cir.delays[l] = frac / df;
            // Moves the phase reference from the lowest subcarrier to the centre.
            cir.samples[l] = out[l] * inv_n * std::polar(1.0, -kPi * half * frac);
        }
        return cir;
    }

    inline std::size_t earliest_peak_index(const ChannelImpulseResponse& cir, double peak_threshold_fraction)
    {
        const std::size_t len = cir.samples.size();
        std::vector<double> mag(len);
        double peak = 0.0;
        for (std::size_t l = 0; l < len; ++l)
        {
            mag[l] = std::abs(cir.samples[l]);
            peak = std::max(peak, mag[l]);
        }
        if (!(peak > 0.0))
            throw NoPeakError("CIR is identically zero");
        const double thr = peak_threshold_fraction * peak;
        for (std::size_t l = 0; l < len; ++l)
        {
            const double prev = mag[(l + len - 1) % len];
            const double next = mag[(l + 1) % len];
            if (mag[l] >= thr && mag[l] >= prev && mag[l] > next)
                return l;
        }
        throw NoPeakError("no CIR peak above " + std::to_string(peak_threshold_fraction) + " of the maximum");
    }

    /// arg of the CIR at its earliest local maximum above the threshold.
    inline double extract_los_phase(const ChannelImpulseResponse& cir, double peak_threshold_fraction = 0.5)
    {
        return std::arg(cir.samples[earliest_peak_index(cir, peak_threshold_fraction)]);
    }

    /// arg(sum exp(j theta)), in (-pi, pi].
    inline double circular_mean(const std::vector<double>& angles)
    {
        if (angles.empty())
            throw std::domain_error("circular_mean: empty input");
        cdouble s(0.0, 0.0);
        for (double a : angles)
            s += std::polar(1.0, a);
        if (std::abs(s) < 1e-12)
            throw std::domain_error("circular_mean: resultant vanishes, mean undefined");
        return wrap(std::arg(s));
    }

    /// atan(1 / (alpha * B * excess_delay)): worst-case LoS phase error caused by
    /// one echo of relative amplitude 1/alpha arriving excess_delay after LoS.
    inline double multipath_phase_error_bound(double alpha, double bandwidth_hz, double excess_delay_s)
    {
        if (!(alpha > 0.0) || !(bandwidth_hz > 0.0) || !(excess_delay_s > 0.0))
            throw std::domain_error("multipath_phase_error_bound: arguments must be positive");
        return std::atan(1.0 / (alpha * bandwidth_hz * excess_delay_s));
    }

    /// Phase as it appears in the measurement model: the CIR carries
    /// -2 pi f d / c + offset, so the receiver reports the negated argument.
    inline double measure_phase_cir(const Scene& scene, const Band& band, std::size_t anchor_index, const Pose& pose,
                                    double model_offset, Rng& rng)
    {
        const auto cfr = synthesize_cfr(scene, band, anchor_index, pose, -model_offset, rng);
        const auto cir = cfr_to_cir(cfr, scene.upsampling_factor);
        return wrap(-extract_los_phase(cir, scene.peak_threshold_fraction));
    }

    inline void write_csv(std::ostream& os, const ChannelFrequencyResponse& cfr)
    {
        os << "index,frequency_hz,re,im\n";
        os.precision(17);
        for (std::size_t i = 0; i < cfr.samples.size(); ++i)
            os << i << ',' << cfr.frequencies[i] << ',' << cfr.samples[i].real() << ',' << cfr.samples[i].imag() << '\n';
    }

    inline void write_csv(std::ostream& os, const ChannelImpulseResponse& cir)
    {
        os << "index,delay_s,re,im\n";
        os.precision(17);
        for (std::size_t i = 0; i < cir.samples.size(); ++i)
            os << i << ',' << cir.delays[i] << ',' << cir.samples[i].real() << ',' << cir.samples[i].imag() << '\n';
    }
} // namespace phaseloc

#endif // PHASELOC_CHANNEL_HPP
