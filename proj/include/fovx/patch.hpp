#pragma once

// 2.5D slab handling. A slice of plane P is the 2D array orthogonal to
// plane_axis(P); its rows follow the lower of the two remaining grid axes and
// its columns the higher one (sagittal: rows = axis 1, cols = axis 2;
// coronal: rows = axis 0, cols = axis 2).

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "fovx/error.hpp"
#include "fovx/volume.hpp"

namespace fovx {

struct Slice2D {
    int rows = 0;
    int cols = 0;
    std::vector<float> data; // row-major

    Slice2D() = default;
    Slice2D(int r, int c, float fill = 0.0f) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

namespace patch_detail {

struct SliceAxes {
    int slice, row, col;
};

inline SliceAxes axes_of(Plane p)
{
    switch (p) {
    case Plane::sagittal: return {0, 1, 2};
    case Plane::coronal: return {1, 0, 2};
    default: return {2, 0, 1};
    }
}

inline std::size_t voxel_of(const GridSpec& g, const SliceAxes& ax, int s, int r, int c)
{
    int idx[3];
    idx[ax.slice] = s;
    idx[ax.row] = r;
    idx[ax.col] = c;
    return g.index(idx[0], idx[1], idx[2]);
}

} // namespace patch_detail

inline int slice_count(const GridSpec& g, Plane p) { return g.dims[plane_axis(p)]; }

inline Slice2D extract_slice(const Volume3D& v, Plane p, int index)
{
    const auto ax = patch_detail::axes_of(p);
    const auto& d = v.grid.dims;
    if (index < 0 || index >= d[ax.slice])
        throw validation_error("slice index out of range");
    Slice2D s(d[ax.row], d[ax.col]);
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c)
            s.at(r, c) = v.data[patch_detail::voxel_of(v.grid, ax, index, r, c)];
    return s;
}

inline void insert_slice(Volume3D& v, Plane p, int index, const Slice2D& s)
{
    const auto ax = patch_detail::axes_of(p);
    const auto& d = v.grid.dims;
    if (s.rows != d[ax.row] || s.cols != d[ax.col])
        throw shape_error("slice shape does not match the volume");
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c)
            v.data[patch_detail::voxel_of(v.grid, ax, index, r, c)] = s.at(r, c);
}

/// Neighbour slice indices center-n..center+n, clamped into [0, count-1].
inline std::vector<int> slab_indices(int center, int n, int count)
{
    std::vector<int> out;
    out.reserve(2 * n + 1);
    for (int o = -n; o <= n; ++o)
        out.push_back(std::clamp(center + o, 0, count - 1));
    return out;
}

/// 2(2n+1) stacked slices: the DWI neighbourhood first, then the T1 one.
struct SlabPatch {
    Plane plane = Plane::sagittal;
    int center_index = 0;
    int n = 0;
    int rows = 0;
    int cols = 0;
    std::vector<float> channels; // channel-major, each rows*cols

    int channel_count() const { return 2 * (2 * n + 1); }
    const float* channel(int c) const { return channels.data() + static_cast<std::size_t>(c) * rows * cols; }
};

inline SlabPatch extract_slab(const Volume3D& dwi, const Volume3D& t1, Plane plane, int center_index, int n)
{
    require_same_grid(dwi.grid, t1.grid, "extract_slab");
    if (n < 1)
        throw validation_error("slab half-width must be at least 1");
    if (plane == Plane::axial)
        throw validation_error("slabs are only defined for sagittal and coronal planes");
    const auto ax = patch_detail::axes_of(plane);
    const auto& d = dwi.grid.dims;
    if (center_index < 0 || center_index >= d[ax.slice])
        throw validation_error("slab center out of range");

    SlabPatch p;
    p.plane = plane;
    p.center_index = center_index;
    p.n = n;
    p.rows = d[ax.row];
    p.cols = d[ax.col];
    const std::size_t plane_size = static_cast<std::size_t>(p.rows) * p.cols;
    p.channels.resize(plane_size * p.channel_count());
    const auto idx = slab_indices(center_index, n, d[ax.slice]);
    const int width = 2 * n + 1;
    for (int src = 0; src < 2; ++src) {
        const Volume3D& vol = src == 0 ? dwi : t1;
        for (int c = 0; c < width; ++c) {
            float* out = p.channels.data() + (static_cast<std::size_t>(src) * width + c) * plane_size;
            for (int r = 0; r < p.rows; ++r)
                for (int q = 0; q < p.cols; ++q)
                    out[static_cast<std::size_t>(r) * p.cols + q] =
                        vol.data[patch_detail::voxel_of(dwi.grid, ax, idx[c], r, q)];
        }
    }
    return p;
}

/// One predicted slice per slice index of a plane; empty entries are holes.
struct PlanePrediction {
    Plane plane = Plane::sagittal;
    std::vector<std::optional<Slice2D>> slices;
};

inline Volume3D assemble_plane(const PlanePrediction& pred, const GridSpec& grid)
{
    const int count = slice_count(grid, pred.plane);
    if (static_cast<int>(pred.slices.size()) != count)
        throw completeness_error("prediction does not cover every slice index");
    Volume3D out(grid);
    for (int s = 0; s < count; ++s) {
        if (!pred.slices[s])
            throw completeness_error("missing predicted slice " + std::to_string(s));
        insert_slice(out, pred.plane, s, *pred.slices[s]);
    }
    return out;
}

/// Runs `predictor(const SlabPatch&) -> Slice2D` over every slice of `plane`
/// and stacks the results.
template <class Predictor>
Volume3D predict_plane(const Volume3D& dwi, const Volume3D& t1, Plane plane, int n, Predictor&& predictor)
{
    PlanePrediction pred;
    pred.plane = plane;
    const int count = slice_count(dwi.grid, plane);
    pred.slices.resize(count);
    for (int s = 0; s < count; ++s)
        pred.slices[s] = predictor(extract_slab(dwi, t1, plane, s, n));
    return assemble_plane(pred, dwi.grid);
}

inline Volume3D fuse_planes(const Volume3D& sag, const Volume3D& cor)
{
    require_same_grid(sag.grid, cor.grid, "fuse_planes");
    Volume3D out(sag.grid);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (sag.data[i] + cor.data[i]) * 0.5f;
    return out;
}

/// m * x + (1 - m) * y_hat with a binary m; acquired voxels are copied, not
/// recomputed.
inline Volume3D composite_output(const Volume3D& x, const Volume3D& y_hat, const Mask3D& m)
{
    require_same_grid(x.grid, y_hat.grid, "composite_output");
    require_same_grid(x.grid, m.grid, "composite_output");
    if (!m.is_binary())
        throw validation_error("compositing mask must be binary");
    Volume3D out(x.grid);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = m.data[i] ? x.data[i] : y_hat.data[i];
    return out;
}

} // namespace fovx
