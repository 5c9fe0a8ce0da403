#pragma once

// Slow, direct reference implementations for the metrics. Nothing here
// shares code with the library beyond the volume containers.

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "fovx/volume.hpp"

namespace fovx::oracle {

inline double psnr(const Volume3D& a, const Volume3D& b, const Mask3D& region)
{
    long double se = 0;
    long n = 0;
    for (int k = 0; k < a.grid.dims[2]; ++k)
        for (int j = 0; j < a.grid.dims[1]; ++j)
            for (int i = 0; i < a.grid.dims[0]; ++i)
                if (region.at(i, j, k)) {
                    const long double d = (long double)a.at(i, j, k) - (long double)b.at(i, j, k);
                    se += d * d;
                    ++n;
                }
    if (se == 0)
        return std::numeric_limits<double>::infinity();
    return static_cast<double>(-10.0L * std::log10(se / n));
}

/// Per-center window loop with clamped coordinates and two-pass moments.
inline double ssim(const Volume3D& a, const Volume3D& b, const Mask3D& region, int w = 7, double k1 = 0.01,
                   double k2 = 0.03)
{
    const auto& d = a.grid.dims;
    const int r = w / 2;
    const double c1 = (k1) * (k1), c2 = (k2) * (k2);
    long double total = 0;
    long count = 0;
    std::vector<double> xs, ys;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (!region.at(i, j, k))
                    continue;
                xs.clear();
                ys.clear();
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const int x = std::clamp(i + dx, 0, d[0] - 1);
                            const int y = std::clamp(j + dy, 0, d[1] - 1);
                            const int z = std::clamp(k + dz, 0, d[2] - 1);
                            xs.push_back(a.at(x, y, z));
                            ys.push_back(b.at(x, y, z));
                        }
                const double n = static_cast<double>(xs.size());
                double mx = 0, my = 0;
                for (std::size_t t = 0; t < xs.size(); ++t) {
                    mx += xs[t];
                    my += ys[t];
                }
                mx /= n;
                my /= n;
                double vx = 0, vy = 0, cxy = 0;
                for (std::size_t t = 0; t < xs.size(); ++t) {
                    vx += (xs[t] - mx) * (xs[t] - mx);
                    vy += (ys[t] - my) * (ys[t] - my);
                    cxy += (xs[t] - mx) * (ys[t] - my);
                }
                vx /= n;
                vy /= n;
                cxy /= n;
                total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return static_cast<double>(total / count);
}

inline double dice(const Mask3D& a, const Mask3D& b)
{
    std::set<std::size_t> sa, sb, both;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i])
            sa.insert(i);
        if (b.data[i])
            sb.insert(i);
    }
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
    if (sa.empty() && sb.empty())
        return 1.0;
    return 2.0 * both.size() / static_cast<double>(sa.size() + sb.size());
}

/// Composite Simpson rule on [a, b] with an even number of intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 200000)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i)
        s += f(a + i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
}

/// Upper tail of chi-square(df) at x, integrated in u = sqrt(x) with the
/// half-line mapped onto [0, 1).
inline double chi2_upper(double x, double df)
{
    if (x <= 0)
        return 1.0;
    const double log_norm = -(df / 2) * std::log(2.0) - std::lgamma(df / 2);
    const double u0 = std::sqrt(x);
    auto f = [&](double v) {
        if (v >= 1.0)
            return 0.0;
        const double u = u0 + v / (1 - v);
        const double xx = u * u;
        const double pdf = std::exp(log_norm + (df / 2 - 1) * std::log(xx) - xx / 2);
        return pdf * 2 * u / ((1 - v) * (1 - v));
    };
    return simpson(f, 0.0, 1.0);
}

/// Two-sided Student t tail, 2 P(T > |t|).
inline double t_two_sided(double t, double df)
{
    const double log_norm = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
    const double a = std::abs(t);
    auto f = [&](double v) {
        v = std::min(v, 1.0 - 1e-9); // one df keeps a finite limit here
        const double x = a + v / (1 - v);
        return std::exp(log_norm - (df + 1) / 2 * std::log1p(x * x / df)) / ((1 - v) * (1 - v));
    };
    return std::min(1.0, 2 * simpson(f, 0.0, 1.0));
}

struct Stat {
    double statistic;
    double p;
};

/// H from mean ranks, 12/(N(N+1)) sum n_i (Rbar_i - (N+1)/2)^2, ties counted
/// by a map and ranks assigned by counting smaller values.
inline Stat kruskal_wallis(const std::vector<std::vector<double>>& groups)
{
    std::vector<double> all;
    for (const auto& g : groups)
        all.insert(all.end(), g.begin(), g.end());
    const double N = static_cast<double>(all.size());
    auto rank = [&](double x) {
        double less = 0, equal = 0;
        for (double y : all) {
            less += y < x;
            equal += y == x;
        }
        return less + (equal + 1) / 2;
    };
    double h = 0;
    for (const auto& g : groups) {
        double rbar = 0;
        for (double x : g)
            rbar += rank(x);
        rbar /= static_cast<double>(g.size());
        h += g.size() * (rbar - (N + 1) / 2) * (rbar - (N + 1) / 2);
    }
    h *= 12 / (N * (N + 1));
    std::map<double, int> counts;
    for (double x : all)
        ++counts[x];
    double ties = 0;
    for (auto [v, c] : counts)
        ties += double(c) * c * c - c;
    const double corr = 1 - ties / (N * N * N - N);
    if (corr <= 0)
        return {0.0, 1.0};
    h /= corr;
    return {h, chi2_upper(h, static_cast<double>(groups.size() - 1))};
}

inline Stat paired_t(const std::vector<double>& a, const std::vector<double>& b)
{
    const double n = static_cast<double>(a.size());
    long double s = 0, s2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long double d = (long double)a[i] - b[i];
        s += d;
        s2 += d * d;
    }
    const long double var = (s2 - s * s / n) / (n - 1);
    if (var <= 0)
        return {0.0, 1.0};
    const double t = static_cast<double>((s / n) / std::sqrt(var / n));
    return {t, t_two_sided(t, n - 1)};
}

inline std::array<double, 4> bland_altman(const std::vector<double>& ref, const std::vector<double>& test)
{
    const double n = static_cast<double>(ref.size());
    long double s = 0, s2 = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const long double d = (long double)test[i] - ref[i];
        s += d;
        s2 += d * d;
    }
    const double m = static_cast<double>(s / n);
    const double sd = static_cast<double>(std::sqrt(std::max(0.0L, (s2 - s * s / n) / (n - 1))));
    return {m, sd, m - 1.96 * sd, m + 1.96 * sd};
}

/// Spearman for tie-free data, 1 - 6 sum d^2 / (n (n^2 - 1)).
inline double spearman_no_ties(const std::vector<double>& x, const std::vector<double>& y)
{
    const std::size_t n = x.size();
    auto ranks = [&](const std::vector<double>& v) {
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n; ++i)
            r[i] = 1 + static_cast<double>(std::count_if(v.begin(), v.end(), [&](double z) { return z < v[i]; }));
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
        s += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double nn = static_cast<double>(n);
    return 1 - 6 * s / (nn * (nn * nn - 1));
}

/// Gradient-free tensor quadratic form.
inline double quadratic(const std::array<float, 6>& t, double gx, double gy, double gz)
{
    const double m[3][3] = {{t[0], t[3], t[4]}, {t[3], t[1], t[5]}, {t[4], t[5], t[2]}};
    const double g[3] = {gx, gy, gz};
    double s = 0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            s += g[a] * m[a][b] * g[b];
    return s;
}

} // namespace fovx::oracle
