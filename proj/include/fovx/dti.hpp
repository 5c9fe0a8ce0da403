#pragma once

// Diffusion tensor fields: storage, the forward signal model and a
// log-linear least-squares fit.

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fovx/error.hpp"
#include "fovx/gradient.hpp"
#include "fovx/volume.hpp"

namespace fovx {

/// Symmetric 3x3 tensor per voxel stored as (xx, yy, zz, xy, xz, yz), mm^2/s.
struct TensorField {
    GridSpec grid;
    std::vector<std::array<float, 6>> d;

    TensorField() = default;
    explicit TensorField(GridSpec g) : grid(std::move(g)), d(grid.voxel_count(), std::array<float, 6>{}) {}

    static std::array<float, 6> pack(const Eigen::Matrix3d& m)
    {
        return {static_cast<float>(m(0, 0)), static_cast<float>(m(1, 1)), static_cast<float>(m(2, 2)),
                static_cast<float>(m(0, 1)), static_cast<float>(m(0, 2)), static_cast<float>(m(1, 2))};
    }

    Eigen::Matrix3d tensor(std::size_t i) const
    {
        const auto& t = d[i];
        Eigen::Matrix3d m;
        m << t[0], t[3], t[4], t[3], t[1], t[5], t[4], t[5], t[2];
        return m;
    }

    /// g^T D g
    double quadratic(std::size_t i, const Eigen::Vector3d& g) const
    {
        const auto& t = d[i];
        return t[0] * g.x() * g.x() + t[1] * g.y() * g.y() + t[2] * g.z() * g.z() +
               2.0 * (t[3] * g.x() * g.y() + t[4] * g.x() * g.z() + t[5] * g.y() * g.z());
    }
};

/// Noiseless tensor signal S0 * exp(-b g^T D g) for one encoding.
inline float tensor_signal(const TensorField& tf, const Volume3D& s0, std::size_t i, double b,
                           const Eigen::Vector3d& g)
{
    if (s0.data[i] == 0.0f)
        return 0.0f;
    return static_cast<float>(s0.data[i] * std::exp(-b * tf.quadratic(i, g)));
}

inline Eigen::Vector3d eigenvalues_descending(const Eigen::Matrix3d& m, Eigen::Vector3d* principal = nullptr)
{
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
    const Eigen::Vector3d ev = es.eigenvalues(); // ascending
    if (principal)
        *principal = es.eigenvectors().col(2);
    return {ev[2], ev[1], ev[0]};
}

inline double fractional_anisotropy(const Eigen::Vector3d& ev)
{
    const double md = ev.mean();
    const double num = (ev.array() - md).square().sum();
    const double den = ev.array().square().sum();
    if (den <= 0.0)
        return 0.0;
    return std::sqrt(1.5 * num / den);
}

struct TensorFit {
    TensorField tensors;
    Volume3D fa;
    std::vector<Eigen::Vector3f> principal;
};

/// Log-linear least-squares tensor fit of every voxel in `region`, using the
/// mean b0 as reference. Signals are floored at 1e-6.
inline TensorFit fit_tensors(const Volume4D& study, const Mask3D& region, const ShellThresholds& t = {})
{
    study.validate();
    if (study.gradient.size() != study.size())
        throw validation_error("tensor fit needs a gradient table");
    std::vector<std::size_t> b0, dw;
    for (std::size_t v = 0; v < study.size(); ++v)
        (study.gradient.bvals[v] <= t.b0_threshold ? b0 : dw).push_back(v);
    if (b0.empty() || dw.size() < 6)
        throw validation_error("tensor fit needs a b0 volume and at least six directions");

    Eigen::MatrixXd A(dw.size(), 6);
    for (std::size_t r = 0; r < dw.size(); ++r) {
        const auto& g = study.gradient.bvecs[dw[r]];
        const double b = study.gradient.bvals[dw[r]];
        A.row(static_cast<Eigen::Index>(r)) << b * g.x() * g.x(), b * g.y() * g.y(), b * g.z() * g.z(),
            2 * b * g.x() * g.y(), 2 * b * g.x() * g.z(), 2 * b * g.y() * g.z();
    }
    const Eigen::MatrixXd pinv = A.completeOrthogonalDecomposition().pseudoInverse();

    const GridSpec& grid = study.grid();
    TensorFit out{TensorField(grid), Volume3D(grid), std::vector<Eigen::Vector3f>(grid.voxel_count(), Eigen::Vector3f::Zero())};
    Eigen::VectorXd y(dw.size());
    for (std::size_t i = 0; i < grid.voxel_count(); ++i) {
        if (!region.data[i])
            continue;
        double s0 = 0;
        for (auto v : b0)
            s0 += study.volumes[v].data[i];
        s0 = std::max(s0 / static_cast<double>(b0.size()), 1e-6);
        for (std::size_t r = 0; r < dw.size(); ++r)
            y[static_cast<Eigen::Index>(r)] = -std::log(std::max<double>(study.volumes[dw[r]].data[i], 1e-6) / s0);
        const Eigen::VectorXd q = pinv * y;
        Eigen::Matrix3d D;
        D << q[0], q[3], q[4], q[3], q[1], q[5], q[4], q[5], q[2];
        out.tensors.d[i] = TensorField::pack(D);
        Eigen::Vector3d e1;
        const auto ev = eigenvalues_descending(D, &e1);
        out.fa.data[i] = static_cast<float>(fractional_anisotropy(ev.cwiseMax(0.0)));
        out.principal[i] = e1.cast<float>();
    }
    return out;
}

} // namespace fovx
