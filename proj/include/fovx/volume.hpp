#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fovx/error.hpp"

namespace fovx {

using Affine = Eigen::Matrix4d;
using Index3 = std::array<int, 3>;
using Spacing3 = std::array<double, 3>;

/// Voxel grid geometry: extent, voxel size and the voxel-index to world-mm
/// transform. Axis 0 runs left-right, axis 1 anterior-posterior and axis 2
/// inferior-superior.
struct GridSpec {
    Index3 dims{1, 1, 1};
    Spacing3 spacing{1.0, 1.0, 1.0};
    Affine affine = Affine::Identity();

    std::size_t voxel_count() const
    {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }

    void validate() const
    {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] <= 0)
                throw geometry_error("grid dimension must be positive");
            if (!(spacing[a] > 0.0))
                throw geometry_error("grid spacing must be positive");
        }
        if (!affine.allFinite())
            throw geometry_error("affine contains non-finite entries");
        if (std::abs(affine.topLeftCorner<3, 3>().determinant()) <= 0.0)
            throw geometry_error("affine is not invertible");
    }

    /// Axis-aligned grid of the given size and spacing whose center sits at
    /// `center_mm` in world space.
    static GridSpec centered(Index3 dims, Spacing3 spacing,
                             Eigen::Vector3d center_mm = Eigen::Vector3d::Zero())
    {
        GridSpec g;
        g.dims = dims;
        g.spacing = spacing;
        g.affine = Affine::Identity();
        for (int a = 0; a < 3; ++a) {
            g.affine(a, a) = spacing[a];
            g.affine(a, 3) = center_mm[a] - spacing[a] * (dims[a] - 1) * 0.5;
        }
        return g;
    }

    Eigen::Vector3d center_world() const
    {
        Eigen::Vector4d c((dims[0] - 1) * 0.5, (dims[1] - 1) * 0.5, (dims[2] - 1) * 0.5, 1.0);
        return (affine * c).head<3>();
    }

    bool same_geometry(const GridSpec& o, double tol = 1e-6) const
    {
        if (dims != o.dims)
            return false;
        for (int a = 0; a < 3; ++a)
            if (std::abs(spacing[a] - o.spacing[a]) > tol)
                return false;
        return (affine - o.affine).cwiseAbs().maxCoeff() <= tol;
    }

    std::size_t index(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    }
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b, std::string_view what)
{
    if (!a.same_geometry(b))
        throw geometry_error(std::string(what) + ": grid mismatch");
}

/// Dense scalar field on a grid. Values are held as 32-bit floats.
struct Volume3D {
    GridSpec grid;
    std::vector<float> data;

    Volume3D() = default;
    explicit Volume3D(GridSpec g, float fill = 0.0f)
        : grid(std::move(g)), data(grid.voxel_count(), fill)
    {
    }

    const Index3& dims() const { return grid.dims; }
    std::size_t size() const { return data.size(); }

    float& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
    float at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }

    void validate() const
    {
        grid.validate();
        if (data.size() != grid.voxel_count())
            throw geometry_error("volume data length does not match dims");
    }
};

/// Binary mask on a grid; 1 marks membership.
struct Mask3D {
    GridSpec grid;
    std::vector<std::uint8_t> data;

    Mask3D() = default;
    explicit Mask3D(GridSpec g, std::uint8_t fill = 0)
        : grid(std::move(g)), data(grid.voxel_count(), fill)
    {
    }

    std::uint8_t& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
    std::uint8_t at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (auto v : data)
            n += v != 0;
        return n;
    }

    bool is_binary() const
    {
        for (auto v : data)
            if (v > 1)
                return false;
        return true;
    }
};

inline Mask3D mask_and(const Mask3D& a, const Mask3D& b)
{
    require_same_grid(a.grid, b.grid, "mask_and");
    Mask3D out(a.grid);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = (a.data[i] && b.data[i]) ? 1 : 0;
    return out;
}

inline Mask3D mask_not(const Mask3D& a)
{
    Mask3D out(a.grid);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = a.data[i] ? 0 : 1;
    return out;
}

inline Mask3D threshold_mask(const Volume3D& v, float above)
{
    Mask3D m(v.grid);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        m.data[i] = v.data[i] > above ? 1 : 0;
    return m;
}

enum class ShellId { b0, b1300 };
enum class Plane { sagittal, coronal, axial };

inline std::string_view to_string(ShellId s) { return s == ShellId::b0 ? "b0" : "b1300"; }

inline std::string_view to_string(Plane p)
{
    switch (p) {
    case Plane::sagittal: return "sagittal";
    case Plane::coronal: return "coronal";
    default: return "axial";
    }
}

/// Grid axis orthogonal to the slices of a plane.
inline int plane_axis(Plane p)
{
    switch (p) {
    case Plane::sagittal: return 0;
    case Plane::coronal: return 1;
    default: return 2;
    }
}

/// Per-volume diffusion encoding: b-values in s/mm^2 and unit directions.
struct GradientTable {
    std::vector<double> bvals;
    std::vector<Eigen::Vector3d> bvecs;

    std::size_t size() const { return bvals.size(); }
    bool empty() const { return bvals.empty(); }
};

/// V volumes sharing one grid, with the gradient table that describes them.
/// The table may be empty right after reading a NIfTI file.
struct Volume4D {
    std::vector<Volume3D> volumes;
    GradientTable gradient;

    std::size_t size() const { return volumes.size(); }
    const GridSpec& grid() const { return volumes.front().grid; }

    void validate() const
    {
        if (volumes.empty())
            throw validation_error("4D study has no volumes");
        for (const auto& v : volumes) {
            v.validate();
            require_same_grid(v.grid, volumes.front().grid, "4D study");
        }
        if (!gradient.empty() && gradient.size() != volumes.size())
            throw validation_error("gradient table length does not match volume count");
    }
};

} // namespace fovx
