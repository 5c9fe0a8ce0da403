#pragma once

// Adversarial and reconstruction objectives.
//
//   L_GAN = mean log D(y) + mean log(1 - D(G(x)))       (D maximizes)
//   L_L1  = mean |y - G(x)|
//   G minimizes  adv + lambda * L_L1, where adv is -mean log D(G(x)) in the
//   non-saturating form or mean log(1 - D(G(x))) in the saturating one.
//
// Probabilities are clamped to [eps, 1 - eps] before the logarithm.

#include <algorithm>
#include <cmath>
#include <span>

#include "fovx/nn/tensor.hpp"

namespace fovx::nn {

inline constexpr double prob_eps = 1e-7;

template <class T>
T sigmoid(T s)
{
    return T(1) / (T(1) + std::exp(-s));
}

template <class T>
T clamp_prob(T p)
{
    return std::clamp(p, static_cast<T>(prob_eps), static_cast<T>(1.0 - prob_eps));
}

/// L_GAN on discriminator probabilities (already squashed to (0,1)).
template <class T>
double gan_loss(std::span<const T> d_real, std::span<const T> d_fake)
{
    if (d_real.empty() || d_fake.empty())
        throw shape_error("gan_loss: empty score grid");
    double r = 0, f = 0;
    for (T p : d_real)
        r += std::log(static_cast<double>(clamp_prob(p)));
    for (T p : d_fake)
        f += std::log(1.0 - static_cast<double>(clamp_prob(p)));
    return r / static_cast<double>(d_real.size()) + f / static_cast<double>(d_fake.size());
}

template <class T>
double l1_loss(std::span<const T> target, std::span<const T> pred)
{
    if (target.size() != pred.size())
        throw shape_error("l1_loss: shape mismatch");
    if (target.empty())
        return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < target.size(); ++i)
        s += std::abs(static_cast<double>(target[i]) - static_cast<double>(pred[i]));
    return s / static_cast<double>(target.size());
}

inline double combined_generator_objective(double gan_term, double l1_term, double lambda)
{
    if (!(lambda >= 0.0))
        throw config_error("lambda must be non-negative");
    return gan_term + lambda * l1_term;
}

/// Loss value and gradient with respect to logits.
template <class T>
struct LogitLoss {
    double value = 0;
    Tensor<T> grad;
};

enum class LogTerm { log_p, log_one_minus_p };

/// sign * mean(term(sigmoid(s))) and its gradient w.r.t. s. The gradient is 0
/// where the probability is clamped.
template <class T>
LogitLoss<T> mean_log_sigmoid(const Tensor<T>& logits, LogTerm term, double sign)
{
    LogitLoss<T> out;
    out.grad = Tensor<T>(logits.c, logits.h, logits.w);
    const auto n = static_cast<double>(logits.size());
    double acc = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const T p = sigmoid(logits.v[i]);
        const T pc = clamp_prob(p);
        const bool clamped = pc != p;
        if (term == LogTerm::log_p) {
            acc += std::log(static_cast<double>(pc));
            out.grad.v[i] = clamped ? T(0) : static_cast<T>(sign * (1.0 - static_cast<double>(p)) / n);
        } else {
            acc += std::log(1.0 - static_cast<double>(pc));
            out.grad.v[i] = clamped ? T(0) : static_cast<T>(-sign * static_cast<double>(p) / n);
        }
    }
    out.value = sign * acc / n;
    return out;
}

/// lambda * mean|target - pred| and its gradient w.r.t. pred.
template <class T>
LogitLoss<T> weighted_l1(const Tensor<T>& target, const Tensor<T>& pred, double lambda)
{
    if (!target.same_shape(pred))
        throw shape_error("l1: shape mismatch");
    LogitLoss<T> out;
    out.grad = Tensor<T>(pred.c, pred.h, pred.w);
    const auto n = static_cast<double>(pred.size());
    out.value = lambda * l1_loss<T>(target.v, pred.v);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T d = pred.v[i] - target.v[i];
        out.grad.v[i] = d > T(0) ? static_cast<T>(lambda / n) : d < T(0) ? static_cast<T>(-lambda / n) : T(0);
    }
    return out;
}

} // namespace fovx::nn
