#pragma once

#include <cmath>
#include <vector>

#include "fovx/nn/tensor.hpp"

namespace fovx::nn {

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
class Adam {
public:
    Adam() = default;
    Adam(const std::vector<Param<T>*>& params, AdamConfig cfg) : cfg_(cfg)
    {
        for (const auto* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    /// One update from the gradients currently stored in `params` (same order
    /// as at construction).
    void step(const std::vector<Param<T>*>& params)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = *params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mh = m[i] / c1, vh = v[i] / c2;
                p.value[i] -= static_cast<T>(cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.eps));
            }
        }
    }

    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

} // namespace fovx::nn
