#pragma once

#include <cmath>

#include "fsd/tensor.hpp"

namespace fsd {

// Adam with bias correction. Parameter order is fixed at construction, so
// updates are deterministic; moments are exposed for checkpointing.
template <typename T>
class Adam {
public:
    Adam(std::vector<NodePtr<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->value.size(), T(0));
            v_[i].assign(params_[i]->value.size(), T(0));
        }
    }

    // Applies grads currently held by the parameters, scaled by grad_scale
    // (1/accumulation_count when gradients were summed over several graphs).
    void step(double grad_scale = 1.0) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            for (size_t j = 0; j < p.value.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]) * grad_scale;
                const double m = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * g;
                const double v = beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * g * g;
                m_[i][j] = static_cast<T>(m);
                v_[i][j] = static_cast<T>(v);
                const double mh = m / bc1;
                const double vh = v / bc2;
                p.value[j] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    const std::vector<NodePtr<T>>& params() const { return params_; }
    std::vector<std::vector<T>>& m() { return m_; }
    std::vector<std::vector<T>>& v() { return v_; }
    const std::vector<std::vector<T>>& m() const { return m_; }
    const std::vector<std::vector<T>>& v() const { return v_; }

private:
    std::vector<NodePtr<T>> params_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

} // namespace fsd
