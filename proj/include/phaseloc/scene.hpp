// SPDX-License-Identifier: Apache-2.0
//
// Geometric and radio configuration of an experiment plus the scenario file
// loader. Everything is SI internally (m, rad, Hz, s).

#ifndef PHASELOC_SCENE_HPP
#define PHASELOC_SCENE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace phaseloc
{
    /// Smooth systematic phase term A*sin(k . (x, y) + phi) added to one anchor's
    /// measured phase. Used to emulate phase-center variation in synthetic scenes.
    struct PhaseBiasTerm
    {
        std::size_t anchor = 0;
        double amplitude_rad = 0.0;
        Vec2 wavevector = Vec2::Zero(); // rad/m
        double phase_rad = 0.0;
    };

    struct Band
    {
        std::size_t index = 1; // 1-based, ascending in frequency
        double frequency_hz = 0.0;
        double bandwidth_hz = 0.0;
        double subcarrier_spacing_hz = 0.0;
        std::vector<Vec3> anchors; // nominal positions known to the solver
        std::size_t reference_index = 0;
        Vec3 tx_offset = Vec3::Zero(); // body frame
        double phase_noise_sigma = 0.0;  // rad, per measured phase
        double likelihood_sigma = deg2rad(15.0);

        // Impairments only the simulator knows about.
        std::vector<Vec3> anchor_errors; // true = nominal + error
        std::vector<double> cable_phase; // rad, constant per anchor
        std::vector<PhaseBiasTerm> bias_terms;

        double wavelength() const noexcept { return phaseloc::wavelength(frequency_hz); }
        std::size_t anchor_count() const noexcept { return anchors.size(); }

        std::size_t subcarrier_count() const
        {
            return static_cast<std::size_t>(std::llround(bandwidth_hz / subcarrier_spacing_hz));
        }

        Vec3 true_anchor(std::size_t n) const
        {
            return anchor_errors.empty() ? anchors[n] : Vec3(anchors[n] + anchor_errors[n]);
        }

        bool has_impairments() const noexcept
        {
            return !anchor_errors.empty() || !cable_phase.empty() || !bias_terms.empty();
        }

        /// Non-reference anchor indices in ascending order; the order of every
        /// per-pair vector in the library.
        std::vector<std::size_t> pair_anchors() const
        {
            std::vector<std::size_t> out;
            out.reserve(anchors.size() - 1);
            for (std::size_t n = 0; n < anchors.size(); ++n)
                if (n != reference_index)
                    out.push_back(n);
            return out;
        }

        /// Systematic per-anchor phase error at TX antenna position x_k: the
        /// anchor-position mismatch, cable phase and bias terms. The calibration
        /// function for a pair is this value minus the reference anchor's.
        double systematic_phase(std::size_t n, const Vec3& tx) const
        {
            double g = 0.0;
            if (!anchor_errors.empty())
                g += kTwoPi * frequency_hz * ((true_anchor(n) - tx).norm() - (anchors[n] - tx).norm()) / kSpeedOfLight;
            if (!cable_phase.empty())
                g += cable_phase[n];
            for (const auto& t : bias_terms)
                if (t.anchor == n)
                    g += t.amplitude_rad * std::sin(t.wavevector.x() * tx.x() + t.wavevector.y() * tx.y() + t.phase_rad);
            return g;
        }
    };

    struct Reflector
    {
        Vec3 point = Vec3::Zero();
        Vec3 normal = Vec3::UnitY();
        double inv_alpha = 0.5; // path amplitude relative to LoS
    };

    enum class ChannelModel
    {
        automatic,   // closed form without reflectors, CIR chain with reflectors
        closed_form,
        cir,
    };

    struct Area
    {
        Vec2 origin = Vec2::Zero();
        double x_m = 1.2;
        double y_m = 1.2;

        bool contains(const Vec3& p, double margin = 0.0) const noexcept
        {
            return p.x() >= origin.x() - margin && p.x() <= origin.x() + x_m + margin &&
                   p.y() >= origin.y() - margin && p.y() <= origin.y() + y_m + margin;
        }
        Vec2 center() const noexcept { return origin + Vec2(0.5 * x_m, 0.5 * y_m); }
    };

    struct Scene
    {
        std::vector<Band> bands;
        std::vector<Reflector> reflectors;
        double target_plane_height = 0.0;
        bool planar = true;
        Area area;
        std::uint64_t seed = 1;
        ChannelModel channel_model = ChannelModel::automatic;
        std::size_t upsampling_factor = 32;
        double peak_threshold_fraction = 0.5;
        std::size_t dmrs_symbols = 3;

        const Band& band(std::size_t k) const { return bands.at(k - 1); }
        std::size_t band_count() const noexcept { return bands.size(); }

        bool uses_cir() const noexcept
        {
            return channel_model == ChannelModel::cir ||
                   (channel_model == ChannelModel::automatic && !reflectors.empty());
        }

        bool has_impairments() const noexcept
        {
            for (const auto& b : bands)
                if (b.has_impairments())
                    return true;
            return false;
        }

        Vec3 on_plane(double x, double y) const { return {x, y, target_plane_height}; }
    };

    struct Pose
    {
        Vec3 position = Vec3::Zero();
        double heading = 0.0;

        Pose() = default;
        Pose(Vec3 p, double h) : position(std::move(p)), heading(wrap(h)) {}
    };

    /// Rotates the band's body-frame TX offset by the heading about +z and adds it
    /// to the target position.
    inline Vec3 tx_antenna_position(const Pose& pose, const Band& band)
    {
        const double c = std::cos(pose.heading);
        const double s = std::sin(pose.heading);
        const Vec3& d = band.tx_offset;
        return pose.position + Vec3(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
    }

    // ------------------------------------------------------------------
    // Scenario files

    namespace detail
    {
        using nlohmann::json;

        inline Vec3 vec3_from(const json& j, double scale, const std::string& what)
        {
            if (!j.is_array() || j.size() != 3)
                throw ParseError(what + ": expected an array of 3 numbers");
            return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>()) * scale;
        }

        inline double number_or(const json& j, const char* key, double fallback)
        {
            auto it = j.find(key);
            return it == j.end() ? fallback : it->get<double>();
        }

        inline void set_dotted(json& root, const std::string& path, const std::string& raw)
        {
            json* node = &root;
            std::stringstream ss(path);
            std::string part;
            std::vector<std::string> parts;
            while (std::getline(ss, part, '.'))
                parts.push_back(part);
            if (parts.empty())
                throw ValidationError("override: empty key");
            for (std::size_t i = 0; i < parts.size(); ++i)
            {
                const std::string& p = parts[i];
                const bool numeric = !p.empty() && p.find_first_not_of("0123456789") == std::string::npos;
                if (numeric && node->is_array())
                {
                    const std::size_t idx = std::stoul(p);
                    if (idx >= node->size())
                        throw ValidationError("override '" + path + "': index " + p + " out of range");
                    node = &(*node)[idx];
                }
                else
                {
                    node = &(*node)[p];
                }
            }
            try
            {
                *node = json::parse(raw);
            }
            catch (const json::parse_error&)
            {
                *node = raw;
            }
        }
    } // namespace detail

    /// Applies "dotted.path=value" overrides; value is parsed as JSON when possible.
    inline void apply_overrides(nlohmann::json& root, const std::vector<std::string>& overrides)
    {
        for (const auto& o : overrides)
        {
            const auto eq = o.find('=');
            if (eq == std::string::npos)
                throw ValidationError("override '" + o + "' is not of the form key=value");
            detail::set_dotted(root, o.substr(0, eq), o.substr(eq + 1));
        }
    }

    inline nlohmann::json read_scenario_json(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in)
            throw ValidationError("scenario file not found: " + path.string());
        try
        {
            return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
        }
        catch (const nlohmann::json::parse_error& e)
        {
            throw ParseError("scenario " + path.string() + ": " + e.what());
        }
    }

    /// Checks every scene invariant; throws ValidationError naming the violated one.
    inline void validate(const Scene& s)
    {
        if (s.bands.empty())
            throw ValidationError("scene has no bands");
        const std::size_t min_anchors = s.planar ? 3 : 4;
        for (std::size_t k = 0; k < s.bands.size(); ++k)
        {
            const Band& b = s.bands[k];
            const std::string tag = "band " + std::to_string(k + 1) + ": ";
            if (!(b.frequency_hz > 0.0))
                throw ValidationError(tag + "carrier frequency must be > 0");
            if (!(b.bandwidth_hz > 0.0))
                throw ValidationError(tag + "bandwidth must be > 0");
            if (!(b.bandwidth_hz < b.frequency_hz))
                throw ValidationError(tag + "bandwidth must be below the carrier frequency");
            if (!(b.subcarrier_spacing_hz > 0.0) || b.subcarrier_count() < 2)
                throw ValidationError(tag + "subcarrier spacing must give at least 2 subcarriers");
            if (k > 0 && !(s.bands[k - 1].frequency_hz < b.frequency_hz))
                throw ValidationError(tag + "bands must be strictly ascending in carrier frequency");
            if (b.anchors.size() < min_anchors)
                throw ValidationError(tag + "needs at least " + std::to_string(min_anchors) + " anchors for " +
                                      (s.planar ? "2D" : "3D") + " localization, got " +
                                      std::to_string(b.anchors.size()));
            for (std::size_t i = 0; i < b.anchors.size(); ++i)
                for (std::size_t j = i + 1; j < b.anchors.size(); ++j)
                    if ((b.anchors[i] - b.anchors[j]).norm() <= 1e-3)
                        throw ValidationError(tag + "anchors " + std::to_string(i) + " and " + std::to_string(j) +
                                              " are closer than 1 mm");
            if (b.reference_index >= b.anchors.size())
                throw ValidationError(tag + "reference_index out of range");
            if (!b.anchor_errors.empty() && b.anchor_errors.size() != b.anchors.size())
                throw ValidationError(tag + "anchor_errors_m must have one entry per anchor");
            if (!b.cable_phase.empty() && b.cable_phase.size() != b.anchors.size())
                throw ValidationError(tag + "cable_phase_deg must have one entry per anchor");
            for (const auto& t : b.bias_terms)
                if (t.anchor >= b.anchors.size())
                    throw ValidationError(tag + "bias term anchor index out of range");
            if (!(b.phase_noise_sigma >= 0.0))
                throw ValidationError(tag + "phase noise sigma must be >= 0");
            if (!(b.likelihood_sigma > 0.0))
                throw ValidationError(tag + "likelihood sigma must be > 0");
        }
        if (s.bands.back().tx_offset.norm() != 0.0)
            throw ValidationError("tx_offset of the highest band must be zero");
        for (std::size_t r = 0; r < s.reflectors.size(); ++r)
        {
            const auto& rf = s.reflectors[r];
            const std::string tag = "reflector " + std::to_string(r) + ": ";
            if (!(rf.inv_alpha > 0.0 && rf.inv_alpha <= 1.0))
                throw ValidationError(tag + "inv_alpha must be in (0, 1]");
            if (std::abs(rf.normal.norm() - 1.0) > 1e-12)
                throw ValidationError(tag + "normal must have unit length");
        }
        if (!(s.area.x_m > 0.0 && s.area.y_m > 0.0))
            throw ValidationError("area extents must be positive");
        if (s.upsampling_factor < 1)
            throw ValidationError("upsampling factor must be >= 1");
        if (!(s.peak_threshold_fraction > 0.0))
            throw ValidationError("peak threshold fraction must be > 0");
        if (s.dmrs_symbols < 1)
            throw ValidationError("dmrs_symbols must be >= 1");
    }

    /// Builds a validated Scene from the scenario JSON schema.
    inline Scene parse_scene(const nlohmann::json& j)
    {
        using nlohmann::json;
        using detail::number_or;
        using detail::vec3_from;
        Scene s;
        try
        {
            double scale = 1.0;
            if (auto u = j.find("units"); u != j.end())
            {
                const auto units = u->get<std::string>();
                if (units == "mm")
                    scale = 1e-3;
                else if (units != "m")
                    throw ParseError("units must be \"m\" or \"mm\"");
            }

            if (!j.contains("bands") || !j["bands"].is_array())
                throw ParseError("scenario: missing bands[]");

            std::vector<double> sigma_deg;
            if (auto n = j.find("noise"); n != j.end() && n->contains("sigma_deg"))
            {
                const auto& sd = (*n)["sigma_deg"];
                if (sd.is_array())
                    sigma_deg = sd.get<std::vector<double>>();
                else
                    sigma_deg.assign(j["bands"].size(), sd.get<double>());
                if (sigma_deg.size() != j["bands"].size())
                    throw ValidationError("noise.sigma_deg must be a scalar or have one value per band");
            }

            for (std::size_t k = 0; k < j["bands"].size(); ++k)
            {
                const json& jb = j["bands"][k];
                Band b;
                b.index = k + 1;
                b.frequency_hz = jb.at("f_hz").get<double>();
                b.bandwidth_hz = jb.at("bandwidth_hz").get<double>();
                b.subcarrier_spacing_hz = number_or(jb, "scs_hz", b.bandwidth_hz / 1024.0);
                for (const auto& a : jb.at("anchors_m"))
                    b.anchors.push_back(vec3_from(a, scale, "anchors_m"));
                b.reference_index = jb.contains("reference_index") ? jb["reference_index"].get<std::size_t>()
                                                                   : b.anchors.size() - 1;
                if (jb.contains("tx_offset_m"))
                    b.tx_offset = vec3_from(jb["tx_offset_m"], scale, "tx_offset_m");
                b.phase_noise_sigma = sigma_deg.empty() ? 0.0 : deg2rad(sigma_deg[k]);
                if (jb.contains("likelihood_sigma_deg"))
                    b.likelihood_sigma = deg2rad(jb["likelihood_sigma_deg"].get<double>());
                if (jb.contains("anchor_errors_m"))
                    for (const auto& a : jb["anchor_errors_m"])
                        b.anchor_errors.push_back(vec3_from(a, scale, "anchor_errors_m"));
                if (jb.contains("cable_phase_deg"))
                    for (const auto& c : jb["cable_phase_deg"])
                        b.cable_phase.push_back(deg2rad(c.get<double>()));
                if (jb.contains("bias_terms"))
                    for (const auto& t : jb["bias_terms"])
                    {
                        PhaseBiasTerm term;
                        term.anchor = t.at("anchor").get<std::size_t>();
                        term.amplitude_rad = deg2rad(t.at("amplitude_deg").get<double>());
                        const auto& kv = t.at("wavevector_rad_per_m");
                        term.wavevector = Vec2(kv.at(0).get<double>(), kv.at(1).get<double>()) / scale;
                        term.phase_rad = deg2rad(number_or(t, "phase_deg", 0.0));
                        b.bias_terms.push_back(term);
                    }
                s.bands.push_back(std::move(b));
            }

            if (j.contains("reflectors"))
                for (const auto& jr : j["reflectors"])
                {
                    Reflector r;
                    r.point = vec3_from(jr.at("point_m"), scale, "point_m");
                    r.normal = vec3_from(jr.at("normal"), 1.0, "normal");
                    r.inv_alpha = jr.at("inv_alpha").get<double>();
                    s.reflectors.push_back(r);
                }

            if (auto a = j.find("area"); a != j.end())
            {
                s.area.x_m = a->at("x_m").get<double>() * scale;
                s.area.y_m = a->at("y_m").get<double>() * scale;
                if (a->contains("origin_m"))
                    s.area.origin = Vec2((*a)["origin_m"][0].get<double>(), (*a)["origin_m"][1].get<double>()) * scale;
            }
            s.target_plane_height = number_or(j, "target_plane_height_m", 0.0) * scale;
            if (j.contains("solve_mode"))
            {
                const auto mode = j["solve_mode"].get<std::string>();
                if (mode != "2D" && mode != "3D")
                    throw ParseError("solve_mode must be \"2D\" or \"3D\"");
                s.planar = mode == "2D";
            }
            if (j.contains("seed"))
                s.seed = j["seed"].get<std::uint64_t>();
            if (auto c = j.find("channel"); c != j.end())
            {
                if (c->contains("model"))
                {
                    const auto m = (*c)["model"].get<std::string>();
                    if (m == "auto")
                        s.channel_model = ChannelModel::automatic;
                    else if (m == "closed_form")
                        s.channel_model = ChannelModel::closed_form;
                    else if (m == "cir")
                        s.channel_model = ChannelModel::cir;
                    else
                        throw ParseError("channel.model must be auto, closed_form or cir");
                }
                s.upsampling_factor = c->value("upsampling_factor", s.upsampling_factor);
                s.peak_threshold_fraction = c->value("peak_threshold_fraction", s.peak_threshold_fraction);
                s.dmrs_symbols = c->value("dmrs_symbols", s.dmrs_symbols);
            }
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ParseError(std::string("scenario: ") + e.what());
        }
        validate(s);
        return s;
    }

    inline Scene load_scene(const std::filesystem::path& path, const std::vector<std::string>& overrides = {})
    {
        auto j = read_scenario_json(path);
        apply_overrides(j, overrides);
        return parse_scene(j);
    }
} // namespace phaseloc

#endif // PHASELOC_SCENE_HPP
