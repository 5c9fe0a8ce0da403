#pragma once

// Field-of-view truncation: simulated cuts, acquired-region masks and the
// missing-thickness QA estimate. The cut axis is grid axis 2 (inferior to
// superior); "top" means the high-index end.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fovx/error.hpp"
#include "fovx/gradient.hpp"
#include "fovx/volume.hpp"

namespace fovx {

enum class CutSide { top, bottom, none };

inline std::string_view to_string(CutSide s)
{
    switch (s) {
    case CutSide::top: return "top";
    case CutSide::bottom: return "bottom";
    default: return "none";
    }
}

inline constexpr int cut_axis = 2;

struct FovCut {
    CutSide side = CutSide::none;
    double extent_mm = 0.0;
    int slice_begin = 0; // half-open [slice_begin, slice_end) along the cut axis
    int slice_end = 0;

    int slice_count() const { return slice_end - slice_begin; }
    bool empty() const { return slice_end <= slice_begin; }
    bool contains(int k) const { return k >= slice_begin && k < slice_end; }
};

/// Resolves a requested extent into whole slices on `grid`.
inline FovCut make_cut(const GridSpec& grid, double extent_mm, CutSide side)
{
    if (!(extent_mm >= 0.0))
        throw validation_error("cut extent must be non-negative");
    const int nz = grid.dims[cut_axis];
    const double dz = grid.spacing[cut_axis];
    if (extent_mm > nz * dz + 1e-9)
        throw validation_error("cut extent exceeds the grid extent");
    FovCut c;
    c.side = side;
    c.extent_mm = extent_mm;
    const int n = side == CutSide::none ? 0 : static_cast<int>(std::lround(extent_mm / dz));
    if (n == 0)
        return c;
    if (side == CutSide::top) {
        c.slice_begin = nz - n;
        c.slice_end = nz;
    } else {
        c.slice_begin = 0;
        c.slice_end = n;
    }
    return c;
}

/// m = 1 on acquired slices, 0 on the cut ones.
inline Mask3D cut_mask(const GridSpec& grid, const FovCut& cut)
{
    Mask3D m(grid, 1);
    const auto& d = grid.dims;
    for (int k = cut.slice_begin; k < cut.slice_end; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                m.at(i, j, k) = 0;
    return m;
}

inline void apply_cut(Volume3D& v, const FovCut& cut)
{
    const auto& d = v.grid.dims;
    for (int k = cut.slice_begin; k < cut.slice_end; ++k)
        std::fill_n(v.data.begin() + static_cast<std::ptrdiff_t>(v.grid.index(0, 0, k)),
                    static_cast<std::ptrdiff_t>(d[0]) * d[1], 0.0f);
}

struct CutStudy {
    Volume4D study;
    FovCut cut;
    Mask3D mask;
};

/// Zero-fills `extent_mm` (rounded to whole slices) from one end of every
/// volume of the study.
inline CutStudy simulate_cutoff(const Volume4D& study, double extent_mm, CutSide side)
{
    study.validate();
    CutStudy out;
    out.cut = make_cut(study.grid(), extent_mm, side);
    out.study = study;
    for (auto& v : out.study.volumes)
        apply_cut(v, out.cut);
    out.mask = cut_mask(study.grid(), out.cut);
    return out;
}

/// One random training cut: extent uniform on [lo, hi] mm, side uniform on
/// {top, bottom}.
template <class Rng>
std::pair<double, CutSide> draw_training_cut(Rng& rng, double lo_mm = 0.0, double hi_mm = 50.0)
{
    std::uniform_real_distribution<double> extent(lo_mm, hi_mm);
    std::bernoulli_distribution top(0.5);
    const double e = extent(rng);
    const CutSide s = top(rng) ? CutSide::top : CutSide::bottom;
    return {e, s};
}

/// 3x3x3 median with edge replication.
inline Volume3D median_filter3(const Volume3D& v)
{
    Volume3D out(v.grid);
    const auto& d = v.grid.dims;
    std::array<float, 27> win{};
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                int n = 0;
                for (int dk = -1; dk <= 1; ++dk) {
                    const int kk = std::clamp(k + dk, 0, d[2] - 1);
                    for (int dj = -1; dj <= 1; ++dj) {
                        const int jj = std::clamp(j + dj, 0, d[1] - 1);
                        for (int di = -1; di <= 1; ++di)
                            win[n++] = v.at(std::clamp(i + di, 0, d[0] - 1), jj, kk);
                    }
                }
                std::nth_element(win.begin(), win.begin() + 13, win.end());
                out.at(i, j, k) = win[13];
            }
    return out;
}

/// Otsu threshold over a 256-bin histogram spanning [min, max]. Returns min
/// when all values are equal.
inline double otsu_threshold(const std::vector<float>& values)
{
    if (values.empty())
        throw degenerate_input_error("otsu threshold of empty set");
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn_it, hi = *mx_it;
    if (!(hi > lo))
        return lo;
    constexpr int bins = 256;
    std::array<double, bins> hist{};
    const double scale = bins / (hi - lo);
    for (float v : values)
        hist[std::min(bins - 1, static_cast<int>((v - lo) * scale))] += 1.0;
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < bins; ++b)
        sum_all += b * hist[b];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int b = 0; b < bins - 1; ++b) {
        w0 += hist[b];
        sum0 += b * hist[b];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0)
            continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    return lo + (best_bin + 1) / scale;
}

inline Mask3D otsu_mask(const Volume3D& v)
{
    return threshold_mask(v, static_cast<float>(otsu_threshold(v.data)));
}

/// Mean of the b0 volumes (all volumes when the table has no b0 entry or is
/// empty).
inline Volume3D mean_b0(const Volume4D& study, const ShellThresholds& t = {})
{
    std::vector<std::size_t> idx;
    for (std::size_t v = 0; v < study.gradient.size(); ++v)
        if (study.gradient.bvals[v] <= t.b0_threshold)
            idx.push_back(v);
    if (idx.empty())
        for (std::size_t v = 0; v < study.size(); ++v)
            idx.push_back(v);
    Volume3D out(study.grid());
    for (auto v : idx)
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] += study.volumes[v].data[i];
    for (auto& x : out.data)
        x /= static_cast<float>(idx.size());
    return out;
}

/// Acquired-region mask m. The mean b0 image is median filtered and Otsu
/// thresholded into a signal mask; a slice is missing only when it holds no
/// signal voxel and belongs to an unbroken run of such slices reaching the
/// top or bottom of the grid. The result is constant within each slice.
inline Mask3D compute_acquired_mask(const Volume4D& study, const ShellThresholds& t = {})
{
    study.validate();
    const GridSpec& grid = study.grid();
    const auto filtered = median_filter3(mean_b0(study, t));
    if (std::none_of(filtered.data.begin(), filtered.data.end(), [](float v) { return v != 0.0f; }))
        return Mask3D(grid, 0);
    const auto thr = static_cast<float>(otsu_threshold(filtered.data));

    const auto& d = grid.dims;
    std::vector<char> has_signal(d[2], 0);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1] && !has_signal[k]; ++j)
            for (int i = 0; i < d[0]; ++i)
                if (filtered.at(i, j, k) > thr) {
                    has_signal[k] = 1;
                    break;
                }
    if (std::none_of(has_signal.begin(), has_signal.end(), [](char c) { return c; }))
        return Mask3D(grid, 0);

    int first = 0, last = d[2] - 1;
    while (!has_signal[first])
        ++first;
    while (!has_signal[last])
        --last;
    FovCut below{CutSide::bottom, first * grid.spacing[2], 0, first};
    FovCut above{CutSide::top, (d[2] - 1 - last) * grid.spacing[2], last + 1, d[2]};
    Mask3D m = cut_mask(grid, below);
    for (int k = above.slice_begin; k < above.slice_end; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                m.at(i, j, k) = 0;
    return m;
}

struct ThicknessEstimate {
    double top_mm = 0.0;
    double bottom_mm = 0.0;

    double total_mm() const { return top_mm + bottom_mm; }
    std::string_view side() const
    {
        if (top_mm > 0 && bottom_mm > 0)
            return "both";
        if (top_mm > 0)
            return "top";
        if (bottom_mm > 0)
            return "bottom";
        return "none";
    }
};

/// Distance from the acquired-region boundary to the farthest brain voxel
/// beyond it, per side.
inline ThicknessEstimate estimate_cutoff_thickness(const Mask3D& acquired, const Mask3D& brain)
{
    require_same_grid(acquired.grid, brain.grid, "estimate_cutoff_thickness");
    const auto& d = acquired.grid.dims;
    const double dz = acquired.grid.spacing[2];
    auto slice_has = [&](const Mask3D& m, int k) {
        const auto base = m.grid.index(0, 0, k);
        for (std::size_t n = 0; n < static_cast<std::size_t>(d[0]) * d[1]; ++n)
            if (m.data[base + n])
                return true;
        return false;
    };
    int acq_lo = -1, acq_hi = -1, brain_lo = -1, brain_hi = -1;
    for (int k = 0; k < d[2]; ++k) {
        if (slice_has(acquired, k)) {
            if (acq_lo < 0)
                acq_lo = k;
            acq_hi = k;
        }
        if (slice_has(brain, k)) {
            if (brain_lo < 0)
                brain_lo = k;
            brain_hi = k;
        }
    }
    ThicknessEstimate e;
    if (brain_lo < 0)
        return e;
    if (acq_lo < 0) {
        e.top_mm = (brain_hi - brain_lo + 1) * dz;
        return e;
    }
    e.top_mm = std::max(0, brain_hi - acq_hi) * dz;
    e.bottom_mm = std::max(0, acq_lo - brain_lo) * dz;
    return e;
}

} // namespace fovx
