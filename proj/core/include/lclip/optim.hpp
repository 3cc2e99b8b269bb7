#pragma once

#include <cmath>
#include <iostream>
#include <numbers>
#include <vector>

#include "lclip/tensor.hpp"

namespace lclip {

// Cosine decay from lr_max at step 0 to lr_min at total_steps. Steps past
// the end clamp to lr_min (a warning is left to the caller's logging).
inline double cosine_lr(int64_t step, int64_t total_steps, double lr_max, double lr_min) {
    check(total_steps > 0, "cosine_lr: total_steps must be positive");
    check(lr_max >= lr_min, "cosine_lr: lr_max must be >= lr_min");
    check(step >= 0, "cosine_lr: negative step");
    if (step > total_steps) {
        std::cerr << "cosine_lr: step " << step << " past total_steps " << total_steps
                  << ", clamping to lr_min\n";
        return lr_min;
    }
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 0.2;
};

// AdamW with decoupled weight decay. Moment buffers live per parameter; the
// update is deterministic and aborts on non-finite gradients.
template <class S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            check(params_[i].requires_grad(), "AdamW: parameter ", i,
                  " does not require grad");
            m_[i].assign(static_cast<size_t>(params_[i].numel()), S(0));
            v_[i].assign(static_cast<size_t>(params_[i].numel()), S(0));
        }
    }

    int64_t step_count() const { return step_; }
    const std::vector<Tensor<S>>& params() const { return params_; }
    const AdamWConfig& config() const { return cfg_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // One update from the gradients currently stored on the parameters.
    // Parameters with no populated gradient are treated as zero-gradient.
    void step(double lr) {
        check(lr >= 0.0, "AdamW: negative learning rate");
        ++step_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>& p = params_[i];
            const int64_t n = p.numel();
            const S* g = p.has_grad() ? p.grad().data() : nullptr;
            S* w = p.values_mut().data();
            S* m = m_[i].data();
            S* v = v_[i].data();
            for (int64_t j = 0; j < n; ++j) {
                const double gj = g ? static_cast<double>(g[j]) : 0.0;
                check(std::isfinite(gj), "AdamW: non-finite gradient in parameter ", i,
                      " at step ", step_, "; aborting update");
                const double mj = b1 * m[j] + (1.0 - b1) * gj;
                const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                const double mhat = mj / bias1;
                const double vhat = vj / bias2;
                double wj = static_cast<double>(w[j]);
                wj -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * wj);
                w[j] = static_cast<S>(wj);
            }
        }
    }

private:
    std::vector<Tensor<S>> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<S>> m_, v_;
    int64_t step_ = 0;
};

} // namespace lclip
