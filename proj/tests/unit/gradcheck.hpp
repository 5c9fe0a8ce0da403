#pragma once

// Central finite-difference oracle for the network code, in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fovx/nn/tensor.hpp"

namespace fovx::testing {

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// dominating.
inline double rel_error(double a, double n, double floor = 1e-6)
{
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Perturbs every entry of `values` by +-h and compares (f+ - f-) / 2h with
/// `analytic`. Returns the worst relative error.
inline double check_entries(std::span<double> values, std::span<const double> analytic,
                            const std::function<double()>& f, double h = 1e-5, double floor = 1e-6)
{
    double worst = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double keep = values[i];
        values[i] = keep + h;
        const double fp = f();
        values[i] = keep - h;
        const double fm = f();
        values[i] = keep;
        worst = std::max(worst, rel_error(analytic[i], (fp - fm) / (2 * h), floor));
    }
    return worst;
}

inline nn::Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    nn::Tensor<double> t(c, h, w);
    for (auto& v : t.v)
        v = n(rng);
    return t;
}

inline double dot(const nn::Tensor<double>& a, const nn::Tensor<double>& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        s += a.v[i] * b.v[i];
    return s;
}

} // namespace fovx::testing
