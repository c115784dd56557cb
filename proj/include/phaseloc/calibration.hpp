// SPDX-License-Identifier: Apache-2.0
//
// Calibration surfaces: residuals at known positions, scattered-point phase
// unwrapping, mean removal and a LOESS fit per anchor pair. Also the delay
// correction surfaces used by the TDoA baseline.

#ifndef PHASELOC_CALIBRATION_HPP
#define PHASELOC_CALIBRATION_HPP

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "loess.hpp"
#include "phase_model.hpp"
#include "rng.hpp"
#include "scene.hpp"

namespace phaseloc
{
    struct CalibrationPointSet
    {
        std::size_t band_index = 0;
        std::vector<Vec3> locations;               // TX antenna positions x_k
        std::vector<std::vector<double>> residuals; // [pair][point], wrapped
    };

    /// residual = wrap(measured delta - geometric delta) at the TX antenna
    /// position of each known pose.
    inline CalibrationPointSet compute_residuals(const Band& band,
                                                 const std::vector<std::pair<Pose, PhaseDifferences>>& points)
    {
        CalibrationPointSet set;
        set.band_index = band.index;
        const auto pairs = band.pair_anchors();
        set.residuals.assign(pairs.size(), {});
        for (const auto& [pose, diff] : points)
        {
            if (diff.band_index != band.index || diff.deltas.size() != pairs.size())
                throw ValidationError("compute_residuals: observation does not belong to band " +
                                      std::to_string(band.index));
            const Vec3 tx = tx_antenna_position(pose, band);
            set.locations.push_back(tx);
            for (std::size_t p = 0; p < pairs.size(); ++p)
                set.residuals[p].push_back(wrap(diff.deltas[p] - geometric_difference(band, pairs[p], tx)));
        }
        return set;
    }

    struct UnwrapResult
    {
        std::vector<double> values;
        std::size_t inconsistent_edges = 0; // non-tree kNN edges whose cycle residue is nonzero
    };

    namespace detail
    {
        struct DisjointSets
        {
            std::vector<std::size_t> parent;
            explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
            std::size_t find(std::size_t x)
            {
                while (parent[x] != x)
                    x = parent[x] = parent[parent[x]];
                return x;
            }
            bool unite(std::size_t a, std::size_t b)
            {
                a = find(a);
                b = find(b);
                if (a == b)
                    return false;
                parent[std::max(a, b)] = std::min(a, b);
                return true;
            }
        };

        struct Edge
        {
            double length;
            std::size_t i, j;
            bool operator<(const Edge& o) const
            {
                if (length != o.length)
                    return length < o.length;
                if (i != o.i)
                    return i < o.i;
                return j < o.j;
            }
        };

        inline std::vector<Edge> knn_edges(const std::vector<Vec2>& pts, std::size_t k)
        {
            const std::size_t n = pts.size();
            std::vector<Edge> edges;
            for (std::size_t i = 0; i < n; ++i)
            {
                std::vector<std::pair<double, std::size_t>> d;
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i)
                        d.push_back({(pts[i] - pts[j]).norm(), j});
                const std::size_t kk = std::min(k, d.size());
                std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
                for (std::size_t r = 0; r < kk; ++r)
                    edges.push_back({d[r].first, std::min(i, d[r].second), std::max(i, d[r].second)});
            }
            std::sort(edges.begin(), edges.end());
            edges.erase(std::unique(edges.begin(), edges.end(),
                                    [](const Edge& a, const Edge& b) { return a.i == b.i && a.j == b.j; }),
                        edges.end());
            return edges;
        }

        inline std::vector<Edge> all_edges(const std::vector<Vec2>& pts)
        {
            std::vector<Edge> edges;
            for (std::size_t i = 0; i < pts.size(); ++i)
                for (std::size_t j = i + 1; j < pts.size(); ++j)
                    edges.push_back({(pts[i] - pts[j]).norm(), i, j});
            std::sort(edges.begin(), edges.end());
            return edges;
        }
    } // namespace detail

    /// Minimum spanning tree over the symmetric k-nearest-neighbour graph (k = 6,
    /// complete graph if that is disconnected); values are accumulated along tree
    /// edges with shortest-arc differences starting from point 0, which keeps its
    /// input value. Assumes neighbouring true values differ by less than pi.
    inline UnwrapResult unwrap_scattered(const std::vector<Vec2>& points, const std::vector<double>& wrapped,
                                         std::size_t k = 6)
    {
        const std::size_t n = points.size();
        if (n != wrapped.size())
            throw ValidationError("unwrap_scattered: points and values differ in length");
        if (n < 2)
            throw InsufficientDataError("unwrap_scattered: need at least 2 points");

        auto graph = detail::knn_edges(points, k);
        auto build_tree = [n](const std::vector<detail::Edge>& edges, std::vector<bool>& used) {
            detail::DisjointSets ds(n);
            used.assign(edges.size(), false);
            std::size_t joined = 0;
            for (std::size_t e = 0; e < edges.size(); ++e)
                if (ds.unite(edges[e].i, edges[e].j))
                {
                    used[e] = true;
                    ++joined;
                }
            return joined == n - 1;
        };
        std::vector<bool> in_tree;
        if (!build_tree(graph, in_tree))
        {
            graph = detail::all_edges(points);
            build_tree(graph, in_tree);
        }

        std::vector<std::vector<std::size_t>> adj(n);
        for (std::size_t e = 0; e < graph.size(); ++e)
            if (in_tree[e])
            {
                adj[graph[e].i].push_back(graph[e].j);
                adj[graph[e].j].push_back(graph[e].i);
            }

        UnwrapResult out;
        out.values.assign(n, 0.0);
        std::vector<bool> seen(n, false);
        std::queue<std::size_t> q;
        out.values[0] = wrapped[0];
        seen[0] = true;
        q.push(0);
        while (!q.empty())
        {
            const std::size_t u = q.front();
            q.pop();
            for (std::size_t v : adj[u])
                if (!seen[v])
                {
                    seen[v] = true;
                    out.values[v] = out.values[u] + wrap(wrapped[v] - wrapped[u]);
                    q.push(v);
                }
        }
        for (std::size_t e = 0; e < graph.size(); ++e)
        {
            if (in_tree[e])
                continue;
            const auto& ed = graph[e];
            const double along = out.values[ed.j] - out.values[ed.i];
            if (std::abs(along - wrap(wrapped[ed.j] - wrapped[ed.i])) > 1e-9)
                ++out.inconsistent_edges;
        }
        return out;
    }

    /// Calibration surfaces for one band, one LOESS fit per anchor pair on the
    /// horizontal TX coordinates.
    struct BandCalibration
    {
        std::size_t band_index = 0;
        std::vector<LoessSurface> pairs;
        std::size_t inconsistent_edges = 0;
    };

    inline std::vector<Vec2> planar(const std::vector<Vec3>& pts)
    {
        std::vector<Vec2> out;
        out.reserve(pts.size());
        for (const auto& p : pts)
            out.emplace_back(p.x(), p.y());
        return out;
    }

    inline BandCalibration build_calibration(const Band& band, const CalibrationPointSet& set, double span = 0.5,
                                             int degree = 1)
    {
        if (set.band_index != band.index)
            throw ValidationError("build_calibration: point set belongs to another band");
        if (set.locations.size() < 4)
            throw InsufficientDataError("build_calibration: need at least 4 calibration points, got " +
                                        std::to_string(set.locations.size()));
        if (set.residuals.size() != band.anchor_count() - 1)
            throw ValidationError("build_calibration: need one residual list per non-reference anchor");
        const auto pts = planar(set.locations);
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j)
                if (pts[i] == pts[j])
                    throw ValidationError("build_calibration: calibration locations must be distinct");
        BandCalibration cal;
        cal.band_index = band.index;
        for (const auto& r : set.residuals)
        {
            auto u = unwrap_scattered(pts, r);
            cal.inconsistent_edges += u.inconsistent_edges;
            cal.pairs.emplace_back(pts, std::move(u.values), span, degree);
        }
        return cal;
    }

    class CalibrationBundle final : public PhaseCorrection
    {
    public:
        std::map<std::size_t, BandCalibration> bands;

        double pair_correction(const Band& band, std::size_t pair, const Vec3& tx, bool* out_of_hull) const override
        {
            auto it = bands.find(band.index);
            if (it == bands.end())
            {
                if (out_of_hull)
                    *out_of_hull = false;
                return 0.0;
            }
            LoessQueryInfo info;
            const double v = it->second.pairs.at(pair).query(Vec2(tx.x(), tx.y()), &info);
            if (out_of_hull)
                *out_of_hull = info.out_of_hull;
            return v;
        }
    };

    /// k-th element (k >= 1) of the van der Corput sequence in `base`.
    inline double radical_inverse(std::size_t k, std::size_t base)
    {
        double f = 1.0, r = 0.0;
        while (k > 0)
        {
            f /= static_cast<double>(base);
            r += f * static_cast<double>(k % base);
            k /= base;
        }
        return r;
    }

    /// N_c well-spread calibration positions over the area (Halton 2,3).
    inline std::vector<Vec3> calibration_locations(const Scene& scene, std::size_t count)
    {
        std::vector<Vec3> out;
        out.reserve(count);
        for (std::size_t i = 1; i <= count; ++i)
            out.push_back(scene.on_plane(scene.area.origin.x() + radical_inverse(i, 2) * scene.area.x_m,
                                         scene.area.origin.y() + radical_inverse(i, 3) * scene.area.y_m));
        return out;
    }

    /// Simulates measurements at `count` known positions (heading 0) and fits every band.
    inline CalibrationBundle calibrate_scene(const Scene& scene, std::size_t count, Rng& rng, double span = 0.5,
                                             int degree = 1, double sigma_p_extra = 0.0)
    {
        std::vector<std::vector<std::pair<Pose, PhaseDifferences>>> per_band(scene.band_count());
        for (const auto& loc : calibration_locations(scene, count))
        {
            const Pose pose(loc, 0.0);
            const auto obs = simulate_observation(scene, pose, rng, sigma_p_extra);
            for (std::size_t k = 0; k < scene.band_count(); ++k)
                per_band[k].push_back({pose, phase_differences(obs[k], scene.bands[k])});
        }
        CalibrationBundle bundle;
        for (std::size_t k = 0; k < scene.band_count(); ++k)
        {
            const Band& b = scene.bands[k];
            bundle.bands[b.index] = build_calibration(b, compute_residuals(b, per_band[k]), span, degree);
        }
        return bundle;
    }

    // Serialization. Doubles are written with round-trip precision, so a
    // reloaded bundle answers every query bit for bit like the original.

    inline nlohmann::json to_json(const LoessSurface& s)
    {
        nlohmann::json j;
        j["span"] = s.span();
        j["degree"] = s.degree();
        j["mean"] = s.mean();
        auto& pts = j["points"] = nlohmann::json::array();
        for (const auto& p : s.points())
            pts.push_back({p.x(), p.y()});
        j["values"] = s.values();
        return j;
    }

    inline LoessSurface loess_from_json(const nlohmann::json& j)
    {
        std::vector<Vec2> pts;
        for (const auto& p : j.at("points"))
            pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        return LoessSurface(std::move(pts), j.at("values").get<std::vector<double>>(), j.at("span").get<double>(),
                            j.at("degree").get<int>());
    }

    inline nlohmann::json to_json(const CalibrationBundle& b)
    {
        nlohmann::json j;
        auto& bands = j["bands"] = nlohmann::json::array();
        for (const auto& [idx, cal] : b.bands)
        {
            nlohmann::json jb;
            jb["band_index"] = idx;
            jb["inconsistent_edges"] = cal.inconsistent_edges;
            auto& pairs = jb["pairs"] = nlohmann::json::array();
            for (const auto& s : cal.pairs)
                pairs.push_back(to_json(s));
            bands.push_back(std::move(jb));
        }
        return j;
    }

    inline CalibrationBundle bundle_from_json(const nlohmann::json& j)
    {
        CalibrationBundle b;
        try
        {
            for (const auto& jb : j.at("bands"))
            {
                BandCalibration cal;
                cal.band_index = jb.at("band_index").get<std::size_t>();
                cal.inconsistent_edges = jb.value("inconsistent_edges", std::size_t{0});
                for (const auto& s : jb.at("pairs"))
                    cal.pairs.push_back(loess_from_json(s));
                b.bands[cal.band_index] = std::move(cal);
            }
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ParseError(std::string("calibration bundle: ") + e.what());
        }
        return b;
    }

    inline void save_bundle(const std::string& path, const CalibrationBundle& b)
    {
        std::ofstream out(path);
        if (!out)
            throw std::runtime_error("cannot write " + path);
        out << to_json(b).dump(1) << '\n';
    }

    inline CalibrationBundle load_bundle(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw ValidationError("calibration file not found: " + path);
        try
        {
            return bundle_from_json(nlohmann::json::parse(in));
        }
        catch (const nlohmann::json::parse_error& e)
        {
            throw ParseError("calibration file " + path + ": " + e.what());
        }
    }

    /// Delay corrections (seconds) per anchor pair for the TDoA baseline.
    struct DelayCalibration
    {
        std::vector<LoessSurface> pairs;

        double correction(std::size_t pair, const Vec3& x) const
        {
            return pairs.empty() ? 0.0 : pairs.at(pair).query(Vec2(x.x(), x.y()));
        }
    };

    /// Same LOESS machinery on delay residuals, which are not cyclic and need
    /// no unwrapping.
    inline DelayCalibration calibrate_tdoa(const std::vector<Vec3>& locations,
                                           const std::vector<std::vector<double>>& residual_delays, double span = 0.5,
                                           int degree = 1)
    {
        DelayCalibration cal;
        const auto pts = planar(locations);
        for (const auto& r : residual_delays)
            cal.pairs.emplace_back(pts, r, span, degree);
        return cal;
    }
} // namespace phaseloc

#endif // PHASELOC_CALIBRATION_HPP
