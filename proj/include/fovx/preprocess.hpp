#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "fovx/error.hpp"
#include "fovx/volume.hpp"

namespace fovx {

struct NormalizationParams {
    double p999 = 1.0;
    double floor = 0.0;
};

/// Nearest-rank percentile: the smallest value with at least q*N values at or
/// below it.
inline double percentile_nearest_rank(std::vector<float> values, double q)
{
    if (values.empty())
        throw degenerate_input_error("percentile of empty set");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    auto nth = values.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(values.begin(), nth, values.end());
    return *nth;
}

namespace preprocess_detail {

inline void apply_normalization(std::vector<float>& data, double p999)
{
    const auto top = static_cast<float>(p999);
    for (auto& v : data)
        v = std::clamp(v, 0.0f, top) / top;
}

inline double checked_p999(std::vector<float> values)
{
    if (std::none_of(values.begin(), values.end(), [](float v) { return v > 0.0f; }))
        throw degenerate_input_error("image has no positive voxel");
    const double p = percentile_nearest_rank(std::move(values), 0.999);
    if (!(p > 0.0))
        throw degenerate_input_error("99.9th percentile is not positive");
    return p;
}

} // namespace preprocess_detail

/// Clamps every volume of the study to [0, p999] and divides by p999, where
/// p999 is taken jointly over all voxels of all volumes.
inline std::pair<Volume4D, NormalizationParams> normalize_intensity(const Volume4D& study)
{
    study.validate();
    std::vector<float> all;
    all.reserve(study.size() * study.grid().voxel_count());
    for (const auto& v : study.volumes)
        all.insert(all.end(), v.data.begin(), v.data.end());
    NormalizationParams p;
    p.p999 = preprocess_detail::checked_p999(std::move(all));

    Volume4D out = study;
    for (auto& v : out.volumes)
        preprocess_detail::apply_normalization(v.data, p.p999);
    return {std::move(out), p};
}

inline std::pair<Volume3D, NormalizationParams> normalize_t1(const Volume3D& t1)
{
    t1.validate();
    NormalizationParams p;
    p.p999 = preprocess_detail::checked_p999(t1.data);
    Volume3D out = t1;
    preprocess_detail::apply_normalization(out.data, p.p999);
    return {std::move(out), p};
}

inline Volume3D denormalize(Volume3D v, const NormalizationParams& p)
{
    const auto s = static_cast<float>(p.p999);
    for (auto& x : v.data)
        x *= s;
    return v;
}

enum class Interp { trilinear, nearest };

namespace preprocess_detail {

inline double snap(double x)
{
    const double r = std::round(x);
    return std::abs(x - r) < 1e-6 ? r : x;
}

inline float sample_trilinear(const Volume3D& src, double x, double y, double z)
{
    const auto& d = src.grid.dims;
    const double c[3] = {snap(x), snap(y), snap(z)};
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        if (c[a] < 0.0 || c[a] > d[a] - 1)
            return 0.0f;
        i0[a] = static_cast<int>(std::floor(c[a]));
        if (i0[a] >= d[a] - 1)
            i0[a] = std::max(0, d[a] - 2);
        f[a] = c[a] - i0[a];
        if (d[a] == 1) {
            i0[a] = 0;
            f[a] = 0.0;
        }
    }
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const double wz = dz ? f[2] : 1.0 - f[2];
        if (wz == 0.0)
            continue;
        for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? f[1] : 1.0 - f[1];
            if (wy == 0.0)
                continue;
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = dx ? f[0] : 1.0 - f[0];
                if (wx == 0.0)
                    continue;
                acc += wx * wy * wz * src.at(i0[0] + dx, i0[1] + dy, i0[2] + dz);
            }
        }
    }
    return static_cast<float>(acc);
}

inline float sample_nearest(const Volume3D& src, double x, double y, double z)
{
    const auto& d = src.grid.dims;
    const double c[3] = {x, y, z};
    int idx[3];
    for (int a = 0; a < 3; ++a) {
        idx[a] = static_cast<int>(std::floor(c[a] + 0.5));
        if (idx[a] < 0 || idx[a] >= d[a])
            return 0.0f;
    }
    return src.at(idx[0], idx[1], idx[2]);
}

} // namespace preprocess_detail

/// Resamples `vol` onto `target`. `world_to_source_world` maps world points of
/// the target into the world frame of `vol` (identity when both share one
/// frame). Samples falling outside the source grid are 0.
inline Volume3D resample(const Volume3D& vol, const GridSpec& target, Interp mode = Interp::trilinear,
                         const Affine& world_to_source_world = Affine::Identity())
{
    vol.validate();
    target.validate();
    if (std::abs(world_to_source_world.topLeftCorner<3, 3>().determinant()) <= 0.0)
        throw geometry_error("registration affine is not invertible");
    if (world_to_source_world.isIdentity(0.0) && vol.grid.same_geometry(target, 0.0))
        return vol;

    const Affine M = vol.grid.affine.inverse() * world_to_source_world * target.affine;
    const Eigen::Vector3d ci = M.block<3, 1>(0, 0), cj = M.block<3, 1>(0, 1),
                          ck = M.block<3, 1>(0, 2), c0 = M.block<3, 1>(0, 3);
    Volume3D out(target);
    const auto& d = target.dims;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j) {
            const Eigen::Vector3d row = c0 + cj * j + ck * k;
            for (int i = 0; i < d[0]; ++i) {
                const Eigen::Vector3d p = row + ci * i;
                out.at(i, j, k) = mode == Interp::trilinear
                                      ? preprocess_detail::sample_trilinear(vol, p.x(), p.y(), p.z())
                                      : preprocess_detail::sample_nearest(vol, p.x(), p.y(), p.z());
            }
        }
    return out;
}

inline Mask3D resample(const Mask3D& mask, const GridSpec& target,
                       const Affine& world_to_source_world = Affine::Identity())
{
    Volume3D v(mask.grid);
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        v.data[i] = mask.data[i];
    const auto r = resample(v, target, Interp::nearest, world_to_source_world);
    Mask3D out(target);
    for (std::size_t i = 0; i < r.data.size(); ++i)
        out.data[i] = r.data[i] > 0.5f ? 1 : 0;
    return out;
}

/// Axis-aligned grid with the given dims and spacing, centered on the center
/// of `subject`.
inline GridSpec normalized_grid(const GridSpec& subject, Index3 dims = {256, 256, 256},
                                Spacing3 spacing = {1.0, 1.0, 1.0})
{
    auto g = GridSpec::centered(dims, spacing, subject.center_world());
    g.validate();
    return g;
}

struct NormalizedSpace {
    Volume4D dwi;
    Volume3D t1;
    GridSpec grid;
};

/// Brings a study and its T1 onto the shared normalized grid. `reg_affine`
/// maps T1 world coordinates into DWI world coordinates.
inline NormalizedSpace to_normalized_space(const Volume4D& study, const Volume3D& t1,
                                           const Affine& reg_affine,
                                           Index3 dims = {256, 256, 256},
                                           Spacing3 spacing = {1.0, 1.0, 1.0})
{
    study.validate();
    t1.validate();
    if (std::abs(reg_affine.topLeftCorner<3, 3>().determinant()) <= 0.0)
        throw geometry_error("registration affine is not invertible");
    NormalizedSpace ns;
    ns.grid = normalized_grid(study.grid(), dims, spacing);
    ns.dwi.gradient = study.gradient;
    ns.dwi.volumes.reserve(study.size());
    for (const auto& v : study.volumes)
        ns.dwi.volumes.push_back(resample(v, ns.grid, Interp::trilinear));
    ns.t1 = resample(t1, ns.grid, Interp::trilinear, reg_affine.inverse());
    return ns;
}

inline Volume3D from_normalized_space(const Volume3D& imputed, const GridSpec& subject_grid)
{
    return resample(imputed, subject_grid, Interp::trilinear);
}

} // namespace fovx
