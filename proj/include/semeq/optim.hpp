#pragma once

#include "semeq/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace semeq {

// Adam with bias correction. One state per parameter tensor.
template <typename S>
class Adam {
public:
    Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Register parameters once, in a fixed order; `step` takes gradients in
    // the same order.
    void attach(std::vector<Tensor<S>*> params) {
        params_ = std::move(params);
        m_.clear();
        v_.clear();
        for (auto* p : params_) {
            m_.emplace_back(static_cast<std::size_t>(p->size()), S(0));
            v_.emplace_back(static_cast<std::size_t>(p->size()), S(0));
        }
        t_ = 0;
    }

    void step(const std::vector<Tensor<S>>& grads) {
        if (grads.size() != params_.size())
            throw std::invalid_argument("Adam::step: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor<S>& p = *params_[pi];
            const Tensor<S>& g = grads[pi];
            if (g.size() != p.size())
                throw std::invalid_argument("Adam::step: gradient shape mismatch");
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::int64_t i = 0; i < p.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const std::size_t ui = static_cast<std::size_t>(i);
                m[ui] = static_cast<S>(beta1_ * m[ui] + (1.0 - beta1_) * gi);
                v[ui] = static_cast<S>(beta2_ * v[ui] + (1.0 - beta2_) * gi * gi);
                const double mhat = static_cast<double>(m[ui]) / bc1;
                const double vhat = static_cast<double>(v[ui]) / bc2;
                p[i] = static_cast<S>(p[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    long long steps_taken() const { return t_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Tensor<S>*> params_;
    std::vector<std::vector<S>> m_, v_;
};

}  // namespace semeq
