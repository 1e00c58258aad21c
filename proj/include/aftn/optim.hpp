#pragma once

#include <aftn/error.hpp>
#include <aftn/tensor.hpp>

#include <cmath>
#include <span>

namespace aftn {

struct OptimConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-3;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("optim.lr must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optim.beta1 must be in (0,1)");
        if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optim.beta2 must be in (0,1)");
        if (!(epsilon > 0.0)) throw ConfigError("optim.epsilon must be positive");
        if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
    }
};

/// One bias-corrected Adam update per parameter, then clears the gradients.
/// The L2 penalty enters as weight_decay * value added to the gradient of
/// decay-enabled params.
inline void adam_step(std::span<Param* const> params, const OptimConfig& config) {
    for (Param* p : params) {
        auto value = p->value.data();
        auto grad = p->value.grad();
        ++p->step_count;
        const double t = static_cast<double>(p->step_count);
        const double correction1 = 1.0 - std::pow(config.beta1, t);
        const double correction2 = 1.0 - std::pow(config.beta2, t);
        const double decay = p->decay_enabled ? config.weight_decay : 0.0;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i] + decay * value[i];
            p->adam_m[i] = config.beta1 * p->adam_m[i] + (1.0 - config.beta1) * g;
            p->adam_v[i] = config.beta2 * p->adam_v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = p->adam_m[i] / correction1;
            const double v_hat = p->adam_v[i] / correction2;
            value[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
        p->value.zero_grad();
    }
}

} // namespace aftn
