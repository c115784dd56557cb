// SPDX-License-Identifier: Apache-2.0
//
// Planar LOESS (tricube-weighted local polynomial regression) and a convex
// hull helper used to flag extrapolated queries.

#ifndef PHASELOC_LOESS_HPP
#define PHASELOC_LOESS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"

namespace phaseloc
{
    /// Counter-clockwise hull by Andrew's monotone chain, collinear points dropped.
    inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts)
    {
        std::sort(pts.begin(), pts.end(),
                  [](const Vec2& a, const Vec2& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
        pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
        if (pts.size() < 3)
            return pts;
        auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
            return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
        };
        std::vector<Vec2> h(2 * pts.size());
        std::size_t k = 0;
        for (std::size_t i = 0; i < pts.size(); ++i)
        {
            while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0)
                --k;
            h[k++] = pts[i];
        }
        for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;)
        {
            while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0)
                --k;
            h[k++] = pts[i];
        }
        h.resize(k - 1);
        return h;
    }

    /// True when q lies inside or on a counter-clockwise hull (tolerance `eps`
    /// in cross-product units). Degenerate hulls contain nothing.
    inline bool hull_contains(const std::vector<Vec2>& hull, const Vec2& q, double eps = 1e-12)
    {
        if (hull.size() < 3)
            return false;
        for (std::size_t i = 0; i < hull.size(); ++i)
        {
            const Vec2& a = hull[i];
            const Vec2& b = hull[(i + 1) % hull.size()];
            if ((b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x()) < -eps)
                return false;
        }
        return true;
    }

    struct LoessQueryInfo
    {
        bool out_of_hull = false;
        bool rank_deficient = false;
    };

    /// Fitted surface. The training mean is removed before fitting and added back
    /// to every prediction.
    class LoessSurface
    {
    public:
        LoessSurface() = default;

        LoessSurface(std::vector<Vec2> points, std::vector<double> values, double span = 0.5, int degree = 1)
            : points_(std::move(points)), values_(std::move(values)), span_(span), degree_(degree)
        {
            if (points_.size() != values_.size())
                throw ValidationError("loess: points and values differ in length");
            if (points_.empty())
                throw InsufficientDataError("loess: no training points");
            if (degree_ < 0 || degree_ > 2)
                throw ValidationError("loess: degree must be 0, 1 or 2");
            if (!(span_ > 0.0 && span_ <= 1.0))
                throw ValidationError("loess: span must be in (0, 1]");
            if (neighbours() < static_cast<std::size_t>(coefficient_count()))
                throw InsufficientDataError("loess: span * N = " + std::to_string(neighbours()) + " points, need " +
                                            std::to_string(coefficient_count()) + " for degree " +
                                            std::to_string(degree_));
            double sum = 0.0;
            for (double v : values_)
                sum += v;
            mean_ = sum / static_cast<double>(values_.size());
            centred_.resize(values_.size());
            for (std::size_t i = 0; i < values_.size(); ++i)
                centred_[i] = values_[i] - mean_;
            hull_ = convex_hull(points_);
            scale_ = 0.0;
            for (const auto& p : points_)
                scale_ = std::max(scale_, p.cwiseAbs().maxCoeff());
        }

        double query(const Vec2& q, LoessQueryInfo* info = nullptr) const
        {
            const std::size_t n = points_.size();
            const std::size_t k = neighbours();
            std::vector<std::pair<double, std::size_t>> d(n);
            for (std::size_t i = 0; i < n; ++i)
                d[i] = {(points_[i] - q).norm(), i};
            std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
            const double dmax = d[k - 1].first;

            const int p = coefficient_count();
            Eigen::MatrixXd a(k, p);
            Eigen::VectorXd y(k);
            Eigen::VectorXd w(k);
            const double unit = dmax > 0.0 ? dmax : 1.0;
            for (std::size_t r = 0; r < k; ++r)
            {
                const std::size_t i = d[r].second;
                double wi = 1.0;
                if (dmax > 0.0)
                {
                    const double t = d[r].first / dmax;
                    const double c = 1.0 - t * t * t;
                    wi = c * c * c;
                }
                w(r) = wi;
                const double sw = std::sqrt(wi);
                const Vec2 u = (points_[i] - q) / unit;
                a(r, 0) = sw;
                if (degree_ >= 1)
                {
                    a(r, 1) = sw * u.x();
                    a(r, 2) = sw * u.y();
                }
                if (degree_ == 2)
                {
                    a(r, 3) = sw * u.x() * u.x();
                    a(r, 4) = sw * u.x() * u.y();
                    a(r, 5) = sw * u.y() * u.y();
                }
                y(r) = sw * centred_[i];
            }

            bool deficient = false;
            double fit = 0.0;
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
            qr.setThreshold(1e-9);
            if (qr.rank() < p)
            {
                deficient = true;
                double sw = 0.0, sy = 0.0;
                for (std::size_t r = 0; r < k; ++r)
                {
                    sw += w(r);
                    sy += w(r) * centred_[d[r].second];
                }
                if (sw > 0.0)
                    fit = sy / sw;
                else
                    fit = centred_[d[0].second];
            }
            else
            {
                fit = qr.solve(y)(0);
            }
            if (info)
            {
                info->rank_deficient = deficient;
                info->out_of_hull = !hull_contains(hull_, q, 1e-12 * std::max(1.0, scale_ * scale_));
            }
            return fit + mean_;
        }

        const std::vector<Vec2>& points() const noexcept { return points_; }
        const std::vector<double>& values() const noexcept { return values_; }
        double span() const noexcept { return span_; }
        int degree() const noexcept { return degree_; }
        double mean() const noexcept { return mean_; }

        std::size_t neighbours() const noexcept
        {
            const auto k = static_cast<std::size_t>(std::ceil(span_ * static_cast<double>(points_.size()) - 1e-12));
            return std::clamp<std::size_t>(k, 1, points_.size());
        }

        int coefficient_count() const noexcept { return degree_ == 0 ? 1 : (degree_ == 1 ? 3 : 6); }

    private:
        std::vector<Vec2> points_;
        std::vector<double> values_;
        std::vector<double> centred_;
        std::vector<Vec2> hull_;
        double span_ = 0.5;
        int degree_ = 1;
        double mean_ = 0.0;
        double scale_ = 0.0;
    };

    inline LoessSurface fit_loess(std::vector<Vec2> points, std::vector<double> values, double span = 0.5,
                                  int degree = 1)
    {
        return LoessSurface(std::move(points), std::move(values), span, degree);
    }
} // namespace phaseloc

#endif // PHASELOC_LOESS_HPP
