#pragma once

// Evaluation: image fidelity (PSNR, windowed 3D SSIM), overlap (Dice), ADC
// maps, distance-resolved curves and the rank/parametric statistics used to
// summarize them.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <Eigen/Dense>

#include "fovx/dti.hpp"
#include "fovx/error.hpp"
#include "fovx/fov.hpp"
#include "fovx/gradient.hpp"
#include "fovx/volume.hpp"

namespace fovx {

inline constexpr double psnr_saturated = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- fidelity

/// 10 log10(1 / MSE) over region voxels; +inf when the images agree there.
inline double psnr(const Volume3D& ref, const Volume3D& test, const Mask3D& region)
{
    require_same_grid(ref.grid, test.grid, "psnr");
    require_same_grid(ref.grid, region.grid, "psnr");
    double se = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ref.data.size(); ++i)
        if (region.data[i]) {
            const double d = static_cast<double>(ref.data[i]) - test.data[i];
            se += d * d;
            ++n;
        }
    if (n == 0)
        throw validation_error("psnr region is empty");
    if (se == 0.0)
        return psnr_saturated;
    return 10.0 * std::log10(1.0 / (se / static_cast<double>(n)));
}

struct SsimParams {
    int window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

namespace metrics_detail {

// Box sum of width w along one axis with replicate edges.
inline void box_axis(std::vector<double>& v, const Index3& d, int axis, int w)
{
    const int r = w / 2;
    const int n = d[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d[0] : static_cast<std::size_t>(d[0]) * d[1];
    const int outer_a = axis == 0 ? d[1] : d[0];
    const int outer_b = axis == 2 ? d[1] : d[2];
    std::vector<double> line(n + 2 * r), out(n);
    for (int b = 0; b < outer_b; ++b)
        for (int a = 0; a < outer_a; ++a) {
            std::size_t base;
            if (axis == 0)
                base = (static_cast<std::size_t>(b) * d[1] + a) * d[0];
            else if (axis == 1)
                base = static_cast<std::size_t>(b) * d[0] * d[1] + a;
            else
                base = static_cast<std::size_t>(b) * d[0] + a;
            for (int t = -r; t < n + r; ++t)
                line[t + r] = v[base + std::clamp(t, 0, n - 1) * stride];
            double s = 0;
            for (int t = 0; t < w; ++t)
                s += line[t];
            for (int t = 0; t < n; ++t) {
                out[t] = s;
                if (t + w < n + 2 * r)
                    s += line[t + w] - line[t];
            }
            for (int t = 0; t < n; ++t)
                v[base + t * stride] = out[t];
        }
}

inline std::vector<double> box_mean(std::vector<double> v, const Index3& d, int w)
{
    for (int a = 0; a < 3; ++a)
        box_axis(v, d, a, w);
    const double inv = 1.0 / (static_cast<double>(w) * w * w);
    for (auto& x : v)
        x *= inv;
    return v;
}

} // namespace metrics_detail

/// Local SSIM at every voxel: uniform w^3 window, replicate padding at the
/// grid boundary, population (1/N) moments.
inline std::vector<double> ssim_map(const Volume3D& ref, const Volume3D& test, const SsimParams& p = {})
{
    require_same_grid(ref.grid, test.grid, "ssim");
    if (p.window < 1 || p.window % 2 == 0)
        throw validation_error("ssim window must be odd and positive");
    const auto& d = ref.grid.dims;
    const std::size_t n = ref.data.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = ref.data[i];
        y[i] = test.data[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    using metrics_detail::box_mean;
    const auto mx = box_mean(std::move(x), d, p.window), my = box_mean(std::move(y), d, p.window);
    const auto mxx = box_mean(std::move(xx), d, p.window), myy = box_mean(std::move(yy), d, p.window);
    const auto mxy = box_mean(std::move(xy), d, p.window);
    const double c1 = std::pow(p.k1 * p.range, 2), c2 = std::pow(p.k2 * p.range, 2);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double vx = mxx[i] - mx[i] * mx[i], vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        s[i] = ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return s;
}

inline double mean_over(const std::vector<double>& map, const Mask3D& region)
{
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (region.data[i]) {
            s += map[i];
            ++n;
        }
    if (n == 0)
        throw validation_error("metric region is empty");
    return s / static_cast<double>(n);
}

/// Mean local SSIM over windows centered in region.
inline double ssim3d(const Volume3D& ref, const Volume3D& test, const Mask3D& region, const SsimParams& p = {})
{
    require_same_grid(ref.grid, region.grid, "ssim3d");
    if (region.count() == 0)
        throw validation_error("ssim region holds no window center");
    return mean_over(ssim_map(ref, test, p), region);
}

// ---------------------------------------------------------------- overlap

/// 2|a&b| / (|a|+|b|), with two empty masks agreeing perfectly.
inline double dice(const Mask3D& a, const Mask3D& b)
{
    require_same_grid(a.grid, b.grid, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] != 0, y = b.data[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

struct SplitDice {
    double acquired = 1.0;
    double imputed = 1.0;
};

inline SplitDice split_region_dice(const Mask3D& ref, const Mask3D& test, const Mask3D& acquired)
{
    require_same_grid(ref.grid, acquired.grid, "split_region_dice");
    const Mask3D missing = mask_not(acquired);
    return {dice(mask_and(ref, acquired), mask_and(test, acquired)),
            dice(mask_and(ref, missing), mask_and(test, missing))};
}

/// Grows a mask by `radius` steps of 6-connected dilation.
inline Mask3D dilate(const Mask3D& m, int radius)
{
    Mask3D cur = m;
    const auto& d = m.grid.dims;
    for (int r = 0; r < radius; ++r) {
        Mask3D next = cur;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    if (cur.at(i, j, k))
                        continue;
                    const bool hit = (i > 0 && cur.at(i - 1, j, k)) || (i + 1 < d[0] && cur.at(i + 1, j, k)) ||
                                     (j > 0 && cur.at(i, j - 1, k)) || (j + 1 < d[1] && cur.at(i, j + 1, k)) ||
                                     (k > 0 && cur.at(i, j, k - 1)) || (k + 1 < d[2] && cur.at(i, j, k + 1));
                    if (hit)
                        next.at(i, j, k) = 1;
                }
        cur = std::move(next);
    }
    return cur;
}

/// Voxels of a tensor fit inside `prior` that are anisotropic (FA above
/// threshold) with principal direction within acos(min_cos) of `axis`.
inline Mask3D segment_structure(const TensorFit& fit, const Mask3D& prior, const Eigen::Vector3d& axis,
                                double fa_threshold = 0.3, double min_cos = 0.7)
{
    require_same_grid(fit.fa.grid, prior.grid, "segment_structure");
    Mask3D out(prior.grid);
    const Eigen::Vector3f a = axis.normalized().cast<float>();
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = prior.data[i] && fit.fa.data[i] > fa_threshold && std::abs(fit.principal[i].dot(a)) > min_cos;
    return out;
}

// ---------------------------------------------------------------- diffusion

/// -ln(S / mean b0) / b for one diffusion-weighted volume; zero outside brain.
inline Volume3D adc_map(const Volume4D& study, std::size_t direction_index, const Mask3D& brain,
                        const ShellThresholds& t = {})
{
    study.validate();
    if (study.gradient.size() != study.size())
        throw validation_error("adc_map needs a gradient table");
    if (direction_index >= study.size())
        throw validation_error("adc_map direction index out of range");
    const double b = study.gradient.bvals[direction_index];
    if (b <= t.b0_threshold)
        throw validation_error("adc_map needs a diffusion-weighted volume");
    std::vector<std::size_t> b0;
    for (std::size_t v = 0; v < study.size(); ++v)
        if (study.gradient.bvals[v] <= t.b0_threshold)
            b0.push_back(v);
    if (b0.empty())
        throw validation_error("adc_map needs a b0 volume");
    require_same_grid(study.grid(), brain.grid, "adc_map");
    constexpr double eps = 1e-6;
    Volume3D out(study.grid());
    const auto& s = study.volumes[direction_index].data;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        if (!brain.data[i])
            continue;
        double s0 = 0;
        for (auto v : b0)
            s0 += study.volumes[v].data[i];
        s0 = std::max(s0 / static_cast<double>(b0.size()), eps);
        out.data[i] = static_cast<float>(-std::log(std::max<double>(s[i], eps) / s0) / b);
    }
    return out;
}

// ---------------------------------------------------------------- spatial

struct DistancePoint {
    double distance_mm = 0;
    int slice = 0;
    double psnr = 0;
    double ssim = 0;
};

/// One entry per missing slice that intersects region, ordered by distance
/// from the brain's outer extremity on the cut side (the outermost region
/// slice is at one slice spacing).
inline std::vector<DistancePoint> per_distance_curve(const Volume3D& ref, const Volume3D& test, const FovCut& cut,
                                                     const Mask3D& region, const SsimParams& p = {})
{
    std::vector<DistancePoint> out;
    if (cut.empty() || cut.side == CutSide::none)
        return out;
    require_same_grid(ref.grid, region.grid, "per_distance_curve");
    const auto& d = ref.grid.dims;
    const double dz = ref.grid.spacing[cut_axis];
    std::vector<std::size_t> per_slice(d[2], 0);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                per_slice[k] += region.at(i, j, k) != 0;
    int extremity = -1;
    if (cut.side == CutSide::top) {
        for (int k = d[2] - 1; k >= 0 && extremity < 0; --k)
            if (per_slice[k])
                extremity = k;
    } else {
        for (int k = 0; k < d[2] && extremity < 0; ++k)
            if (per_slice[k])
                extremity = k;
    }
    if (extremity < 0)
        return out;
    const auto smap = ssim_map(ref, test, p);
    for (int k = cut.slice_begin; k < cut.slice_end; ++k) {
        if (!per_slice[k])
            continue;
        Mask3D slice(ref.grid);
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                slice.at(i, j, k) = region.at(i, j, k);
        const int steps = cut.side == CutSide::top ? extremity - k : k - extremity;
        out.push_back({(steps + 1) * dz, k, psnr(ref, test, slice), mean_over(smap, slice)});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.distance_mm < b.distance_mm; });
    return out;
}

/// Fills every missing slice with the nearest acquired slice along the cut
/// axis. The reference point for imputation methods.
inline Volume3D nearest_slice_fill(const Volume3D& v, const Mask3D& acquired)
{
    require_same_grid(v.grid, acquired.grid, "nearest_slice_fill");
    const auto& d = v.grid.dims;
    std::vector<int> have;
    for (int k = 0; k < d[2]; ++k) {
        bool any = false;
        for (int j = 0; j < d[1] && !any; ++j)
            for (int i = 0; i < d[0] && !any; ++i)
                any = acquired.at(i, j, k) != 0;
        if (any)
            have.push_back(k);
    }
    if (have.empty())
        throw validation_error("nothing acquired to replicate");
    Volume3D out = v;
    for (int k = 0; k < d[2]; ++k) {
        auto it = std::lower_bound(have.begin(), have.end(), k);
        if (it != have.end() && *it == k)
            continue;
        int src;
        if (it == have.end())
            src = have.back();
        else if (it == have.begin())
            src = *it;
        else
            src = (k - *(it - 1) <= *it - k) ? *(it - 1) : *it;
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                out.at(i, j, k) = v.at(i, j, src);
    }
    return out;
}

// ---------------------------------------------------------------- statistics

/// Average ranks (1-based) with ties sharing the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& x)
{
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]])
            ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t)
            r[order[t]] = avg;
        i = j + 1;
    }
    return r;
}

struct TestResult {
    double statistic = 0;
    double p = 1;
    double df = 0;
};

inline double t_two_sided_p(double t, double df)
{
    if (std::isinf(t))
        return 0.0;
    boost::math::students_t dist(df);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k-1 df.
inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups)
{
    if (groups.size() < 2)
        throw validation_error("kruskal_wallis needs at least two groups");
    std::vector<double> all;
    for (const auto& g : groups) {
        if (g.empty())
            throw validation_error("kruskal_wallis group is empty");
        all.insert(all.end(), g.begin(), g.end());
    }
    const double N = static_cast<double>(all.size());
    const double df = static_cast<double>(groups.size() - 1);
    const auto r = average_ranks(all);
    double ties = 0;
    {
        auto s = all;
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i < s.size();) {
            std::size_t j = i;
            while (j < s.size() && s[j] == s[i])
                ++j;
            const double t = static_cast<double>(j - i);
            ties += t * t * t - t;
            i = j;
        }
    }
    const double correction = 1.0 - ties / (N * N * N - N);
    if (correction <= 0)
        return {0.0, 1.0, df};
    double sum = 0;
    std::size_t off = 0;
    for (const auto& g : groups) {
        double rs = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
            rs += r[off + i];
        off += g.size();
        sum += rs * rs / static_cast<double>(g.size());
    }
    const double H = std::max(0.0, (12.0 / (N * (N + 1)) * sum - 3.0 * (N + 1)) / correction);
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), H));
    return {H, p, df};
}

/// Two-sided paired t-test on a - b.
inline TestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size())
        throw validation_error("paired_t_test length mismatch");
    if (a.size() < 2)
        throw validation_error("paired_t_test needs at least two pairs");
    const double n = static_cast<double>(a.size());
    double mean = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        mean += a[i] - b[i];
    mean /= n;
    double ss = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        ss += std::pow(a[i] - b[i] - mean, 2);
    const double df = n - 1;
    const double sd = std::sqrt(ss / df);
    if (sd == 0.0) {
        if (mean == 0.0)
            return {0.0, 1.0, df};
        return {std::copysign(std::numeric_limits<double>::infinity(), mean), 0.0, df};
    }
    const double t = mean / (sd / std::sqrt(n));
    return {t, t_two_sided_p(t, df), df};
}

/// Spearman rank correlation with a two-sided p from the t approximation.
inline TestResult spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size())
        throw validation_error("spearman length mismatch");
    if (x.size() < 3)
        throw validation_error("spearman needs at least three pairs");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    const double df = n - 2;
    if (sxx == 0 || syy == 0)
        return {0.0, 1.0, df};
    const double rho = sxy / std::sqrt(sxx * syy);
    if (std::abs(rho) >= 1.0)
        return {rho, 0.0, df};
    const double t = rho * std::sqrt(df / (1 - rho * rho));
    return {rho, t_two_sided_p(t, df), df};
}

struct BlandAltman {
    double mean_diff = 0;
    double sd_diff = 0;
    double loa_low = 0;
    double loa_high = 0;
};

inline BlandAltman bland_altman(const std::vector<double>& ref, const std::vector<double>& test)
{
    if (ref.size() != test.size())
        throw validation_error("bland_altman length mismatch");
    if (ref.size() < 2)
        throw validation_error("bland_altman needs at least two pairs");
    const double n = static_cast<double>(ref.size());
    double m = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        m += test[i] - ref[i];
    m /= n;
    double ss = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        ss += std::pow(test[i] - ref[i] - m, 2);
    const double sd = std::sqrt(ss / (n - 1));
    return {m, sd, m - 1.96 * sd, m + 1.96 * sd};
}

struct Summary {
    double mean = 0;
    double sd = 0;
    std::size_t n = 0;
};

/// Mean and sample sd of finite values; saturated entries are skipped.
inline Summary summarize(const std::vector<double>& v)
{
    Summary s;
    for (double x : v)
        if (std::isfinite(x)) {
            s.mean += x;
            ++s.n;
        }
    if (s.n == 0)
        return s;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0;
        for (double x : v)
            if (std::isfinite(x))
                ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

} // namespace fovx
