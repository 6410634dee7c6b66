#pragma once

#include <cmath>

#include "dpt/net.hpp"

namespace dpt {

// One decoupled-weight-decay Adam update on a single parameter tensor.
// m, v are the running first/second moment buffers; t is the 1-based step
// count used for bias correction. Parameters with no accumulated gradient
// are treated as having gradient zero.
template <typename T>
void adamw_step(Tensor<T>& p, std::vector<T>& m, std::vector<T>& v, int64_t t, T lr, T beta1,
                T beta2, T eps, T weight_decay) {
    check(t >= 1, "adamw_step: step count must be >= 1");
    const size_t n = static_cast<size_t>(p.numel());
    check(m.size() == n && v.size() == n, "adamw_step: moment buffer size mismatch");
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
    const bool has_g = p.has_grad();
    const std::vector<T>* gp = has_g ? &p.grad() : nullptr;
    T* pv = p.raw().data();
    for (size_t i = 0; i < n; ++i) {
        const T g = has_g ? (*gp)[i] : T(0);
        m[i] = beta1 * m[i] + (T(1) - beta1) * g;
        v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        pv[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * pv[i]);
    }
}

// Optimizer over a ParamSet. Moment buffers are keyed by position, so the
// set must not change between steps.
template <typename T>
class AdamW {
public:
    AdamW(ParamSet<T> params, T lr, T weight_decay, T beta1 = T(0.9), T beta2 = T(0.999),
          T eps = T(1e-8))
        : params_(std::move(params)),
          lr_(lr),
          weight_decay_(weight_decay),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {
        m_.resize(params_.items.size());
        v_.resize(params_.items.size());
        for (size_t i = 0; i < params_.items.size(); ++i) {
            const size_t n = static_cast<size_t>(params_.items[i].second.numel());
            m_[i].assign(n, T(0));
            v_[i].assign(n, T(0));
        }
    }

    void step() {
        ++t_;
        for (size_t i = 0; i < params_.items.size(); ++i)
            adamw_step(params_.items[i].second, m_[i], v_[i], t_, lr_, beta1_, beta2_, eps_,
                       weight_decay_);
    }

    void zero_grad() { params_.zero_grad(); }

    T lr() const { return lr_; }
    void set_lr(T lr) { lr_ = lr; }
    int64_t step_count() const { return t_; }
    const ParamSet<T>& params() const { return params_; }

private:
    ParamSet<T> params_;
    T lr_, weight_decay_, beta1_, beta2_, eps_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace dpt
