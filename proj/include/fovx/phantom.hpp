#pragma once

// Synthetic ground truth: an ellipsoidal head with CSF/GM/WM shells, a
// ventricle and straight white-matter fiber cylinders, each voxel carrying a
// single diffusion tensor. Tissue boundaries are one-voxel linear ramps.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fovx/dti.hpp"
#include "fovx/error.hpp"
#include "fovx/volume.hpp"

namespace fovx {

struct FiberSpec {
    std::string name;
    Eigen::Vector3d center_mm;  // relative to the head center
    Eigen::Vector3d direction;
    double radius_mm = 4.0;
};

struct PhantomSpec {
    Index3 dims{64, 64, 64};
    Spacing3 spacing{1.0, 1.0, 1.0};
    // The z semi-axis exceeds half the grid height so that every axial slice
    // holds brain.
    std::array<double, 3> semi_axes_mm{24.0, 27.0, 34.0};
    double csf_thickness_mm = 3.0;
    double gm_thickness_mm = 4.0;
    std::array<double, 3> ventricle_mm{5.0, 9.0, 6.0};

    double md_csf = 3.0e-3;
    double md_gm = 0.8e-3;
    double md_wm = 0.7e-3;
    double fiber_lambda_par = 1.7e-3;
    double fiber_lambda_perp = 0.3e-3;

    double s0_csf = 1.0, s0_gm = 0.8, s0_wm = 0.65;
    double t1_csf = 0.25, t1_gm = 0.6, t1_wm = 1.0;

    std::vector<FiberSpec> fibers = default_fibers();
    double jitter = 0.04;  // relative geometry/intensity jitter per seed
    double noise_sigma = 0.01;
    std::uint64_t seed = 1;

    static std::vector<FiberSpec> default_fibers()
    {
        return {
            {"cst", {8.0, 2.0, 0.0}, {0.0, 0.0, 1.0}, 4.0},
            {"cc", {0.0, -2.0, 18.0}, {1.0, 0.0, 0.0}, 4.0},
            {"slf", {-11.0, 0.0, 8.0}, {0.0, 0.8, 0.6}, 3.5},
            {"ilf", {-10.0, 0.0, -14.0}, {0.0, 1.0, 0.0}, 3.5},
        };
    }

    void validate() const
    {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 8 || !(spacing[a] > 0))
                throw validation_error("phantom grid too small or non-positive spacing");
            if (!(semi_axes_mm[a] > csf_thickness_mm + gm_thickness_mm + 1.0))
                throw validation_error("phantom semi-axes too small for the tissue shells");
        }
        for (int a = 0; a < 2; ++a)
            if (semi_axes_mm[a] * (1 + jitter) + 2.0 > 0.5 * (dims[a] - 1) * spacing[a])
                throw validation_error("phantom semi-axes do not fit inside the grid");
        if (!(noise_sigma >= 0))
            throw validation_error("noise sigma must be non-negative");
        if (jitter < 0 || jitter > 0.2)
            throw validation_error("phantom jitter must be in [0, 0.2]");
        if (fibers.size() < 2)
            throw validation_error("phantom needs at least two fiber cylinders");
        for (const auto& f : fibers)
            if (!(f.direction.norm() > 0) || !(f.radius_mm > 0))
                throw validation_error("fiber '" + f.name + "' has a degenerate geometry");
    }
};

struct Phantom {
    Volume3D t1;
    Volume3D s0;
    TensorField tensors;
    Mask3D brain;  // brain fraction >= 0.5
    std::map<std::string, Mask3D> structures;
    std::map<std::string, Eigen::Vector3d> structure_axes;
};

namespace phantom_detail {

inline double ramp(double d_vox) { return std::clamp(d_vox + 0.5, 0.0, 1.0); }

/// Approximate signed distance (mm, positive inside) to an axis-aligned
/// ellipsoid surface: (1 - r) / |grad r|.
inline double ellipsoid_depth(const Eigen::Vector3d& p, const Eigen::Vector3d& axes)
{
    const Eigen::Vector3d q = p.cwiseQuotient(axes);
    const double r = q.norm();
    if (r < 1e-9)
        return axes.minCoeff();
    const Eigen::Vector3d grad = q.cwiseQuotient(axes) / r;
    return (1.0 - r) / grad.norm();
}

inline double cylinder_depth(const Eigen::Vector3d& p, const FiberSpec& f, const Eigen::Vector3d& axis)
{
    const Eigen::Vector3d rel = p - f.center_mm;
    return f.radius_mm - (rel - rel.dot(axis) * axis).norm();
}

} // namespace phantom_detail

inline Phantom make_phantom(const PhantomSpec& spec)
{
    spec.validate();
    using namespace phantom_detail;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double j = spec.jitter;
    auto jit = [&](double v) { return v * (1.0 + j * u(rng)); };

    Eigen::Vector3d axes(jit(spec.semi_axes_mm[0]), jit(spec.semi_axes_mm[1]), spec.semi_axes_mm[2]);
    // keep the brain touching both z ends
    const double half_z = 0.5 * (spec.dims[2] - 1) * spec.spacing[2];
    axes.z() = std::max(axes.z() * (1.0 + j * 0.5 * (u(rng) + 1.0)), half_z + 2.0);
    const Eigen::Vector3d shift(j * 20.0 * u(rng), j * 20.0 * u(rng), 0.0);
    const double csf = jit(spec.csf_thickness_mm), gm = jit(spec.gm_thickness_mm);
    const Eigen::Vector3d inner = axes.array() - csf;
    const Eigen::Vector3d wm_axes = inner.array() - gm;
    const Eigen::Vector3d vent(jit(spec.ventricle_mm[0]), jit(spec.ventricle_mm[1]), jit(spec.ventricle_mm[2]));

    std::vector<FiberSpec> fibers = spec.fibers;
    std::vector<Eigen::Vector3d> fiber_axes;
    for (auto& f : fibers) {
        f.center_mm += Eigen::Vector3d(u(rng), u(rng), u(rng)) * (j * 40.0);
        f.radius_mm = jit(f.radius_mm);
        Eigen::Vector3d a = f.direction.normalized() + Eigen::Vector3d(u(rng), u(rng), u(rng)) * (j * 2.0);
        fiber_axes.push_back(a.normalized());
    }
    const double s0_csf = jit(spec.s0_csf), s0_gm = jit(spec.s0_gm), s0_wm = jit(spec.s0_wm);
    const double t1_csf = jit(spec.t1_csf), t1_gm = jit(spec.t1_gm), t1_wm = jit(spec.t1_wm);

    const GridSpec grid = GridSpec::centered(spec.dims, spec.spacing);
    const double vox = *std::min_element(spec.spacing.begin(), spec.spacing.end());
    Phantom ph{Volume3D(grid), Volume3D(grid), TensorField(grid), Mask3D(grid), {}, {}};
    for (std::size_t f = 0; f < fibers.size(); ++f) {
        ph.structures.emplace(fibers[f].name, Mask3D(grid));
        ph.structure_axes[fibers[f].name] = fiber_axes[f];
    }

    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    const Eigen::Vector3d c0 = grid.center_world() + shift;
    for (int k = 0; k < spec.dims[2]; ++k)
        for (int jj = 0; jj < spec.dims[1]; ++jj)
            for (int i = 0; i < spec.dims[0]; ++i) {
                const std::size_t idx = grid.index(i, jj, k);
                const Eigen::Vector3d p = (grid.affine * Eigen::Vector4d(i, jj, k, 1)).head<3>() - c0;
                const double f_brain = ramp(ellipsoid_depth(p, axes) / vox);
                if (f_brain <= 0.0)
                    continue;
                const double f_inner = ramp(ellipsoid_depth(p, inner) / vox);
                const double f_wm_all = ramp(ellipsoid_depth(p, wm_axes) / vox);
                const double f_vent = ramp(ellipsoid_depth(p, vent) / vox);
                const double f_wm = f_wm_all * (1.0 - f_vent);
                const double f_gm = std::max(0.0, f_inner - f_wm_all);
                const double f_csf = std::max(0.0, f_brain - f_gm - f_wm);

                // fiber tensor inside WM; overlapping cylinders are averaged
                Eigen::Matrix3d wm_tensor = spec.md_wm * I;
                double fiber_weight = 0.0;
                Eigen::Matrix3d fiber_sum = Eigen::Matrix3d::Zero();
                for (std::size_t f = 0; f < fibers.size(); ++f) {
                    const double w = ramp(cylinder_depth(p, fibers[f], fiber_axes[f]) / vox);
                    if (w <= 0)
                        continue;
                    const Eigen::Vector3d& a = fiber_axes[f];
                    const Eigen::Matrix3d Df =
                        spec.fiber_lambda_perp * I + (spec.fiber_lambda_par - spec.fiber_lambda_perp) * a * a.transpose();
                    fiber_sum += w * Df;
                    fiber_weight += w;
                    if (w >= 0.5 && f_wm >= 0.5)
                        ph.structures.at(fibers[f].name).data[idx] = 1;
                }
                if (fiber_weight > 0) {
                    const double cover = std::min(1.0, fiber_weight);
                    wm_tensor = (1.0 - cover) * wm_tensor + cover * (fiber_sum / fiber_weight);
                }

                const double s0 = f_csf * s0_csf + f_gm * s0_gm + f_wm * s0_wm;
                Eigen::Matrix3d D = (f_csf * s0_csf * spec.md_csf * I + f_gm * s0_gm * spec.md_gm * I +
                                     f_wm * s0_wm * wm_tensor) / s0;
                ph.s0.data[idx] = static_cast<float>(s0);
                ph.tensors.d[idx] = TensorField::pack(D);
                ph.t1.data[idx] = static_cast<float>(f_csf * t1_csf + f_gm * t1_gm + f_wm * t1_wm);
                ph.brain.data[idx] = f_brain >= 0.5 ? 1 : 0;
            }
    return ph;
}

/// Unit directions spread over a hemisphere: a Fibonacci lattice relaxed by
/// antipodally symmetric electrostatic repulsion.
inline std::vector<Eigen::Vector3d> repulsion_directions(int n, int iterations = 500)
{
    if (n < 1)
        throw validation_error("need at least one direction");
    std::vector<Eigen::Vector3d> d(n);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (i + 0.5) / n;
        const double r = std::sqrt(1.0 - z * z);
        d[i] = Eigen::Vector3d(r * std::cos(golden * i), r * std::sin(golden * i), z);
    }
    double step = 0.05;
    for (int it = 0; it < iterations; ++it) {
        std::vector<Eigen::Vector3d> force(n, Eigen::Vector3d::Zero());
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                if (a == b)
                    continue;
                for (double s : {1.0, -1.0}) {
                    const Eigen::Vector3d diff = d[a] - s * d[b];
                    const double r2 = std::max(diff.squaredNorm(), 1e-12);
                    force[a] += diff / (r2 * std::sqrt(r2));
                }
            }
        for (int a = 0; a < n; ++a) {
            Eigen::Vector3d f = force[a] - force[a].dot(d[a]) * d[a];
            d[a] = (d[a] + step * f / std::max(1.0, static_cast<double>(n))).normalized();
        }
        step *= 0.995;
    }
    for (auto& v : d)
        if (v.z() < 0)
            v = -v;
    return d;
}

/// One b0 followed by `directions` volumes at b.
inline GradientTable make_gradient_table(int directions = 40, double b = 1300.0)
{
    GradientTable g;
    g.bvals.push_back(0.0);
    g.bvecs.push_back(Eigen::Vector3d::Zero());
    for (const auto& v : repulsion_directions(directions)) {
        g.bvals.push_back(b);
        g.bvecs.push_back(v);
    }
    return g;
}

/// S = S0 exp(-b g^T D g) per volume, then Rician noise of scale sigma
/// (magnitude of a complex Gaussian perturbation) when sigma > 0.
inline Volume4D simulate_dwi(const TensorField& tensors, const Volume3D& s0, const GradientTable& gradient,
                             double sigma, std::uint64_t seed = 0)
{
    require_same_grid(tensors.grid, s0.grid, "simulate_dwi");
    if (gradient.bvals.size() != gradient.bvecs.size() || gradient.empty())
        throw validation_error("simulate_dwi needs a non-empty gradient table");
    if (!(sigma >= 0))
        throw validation_error("noise sigma must be non-negative");
    Volume4D out;
    out.gradient = gradient;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma > 0 ? sigma : 1.0);
    for (std::size_t v = 0; v < gradient.size(); ++v) {
        Volume3D vol(s0.grid);
        const double b = gradient.bvals[v];
        const Eigen::Vector3d g = gradient.bvecs[v];
        for (std::size_t i = 0; i < vol.data.size(); ++i) {
            const float s = tensor_signal(tensors, s0, i, b, g);
            if (sigma > 0) {
                const double re = s + n(rng), im = n(rng);
                vol.data[i] = static_cast<float>(std::sqrt(re * re + im * im));
            } else {
                vol.data[i] = s;
            }
        }
        out.volumes.push_back(std::move(vol));
    }
    return out;
}

struct PhantomStudy {
    Phantom phantom;
    Volume4D dwi;
};

inline PhantomStudy make_phantom_study(const PhantomSpec& spec, int directions = 40, double b = 1300.0)
{
    PhantomStudy s{make_phantom(spec), {}};
    s.dwi = simulate_dwi(s.phantom.tensors, s.phantom.s0, make_gradient_table(directions, b), spec.noise_sigma,
                         spec.seed * 7919 + 17);
    return s;
}

} // namespace fovx
