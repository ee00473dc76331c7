#include "csf/optimizer.hpp"

#include <cmath>

#include "csf/error.hpp"

namespace csf::num {

void optimizer_step(ParamStore& params, const Gradients& gradients, OptimizerState& state) {
    const AdamConfig& cfg = state.config;
    for (const auto& [name, grad] : gradients) {
        if (params.get(name).shape() != grad.shape())
            fail(ErrorKind::ShapeMismatch, "gradient for " + name + " has shape " +
                                               shape_str(grad.shape()));
    }
    ++state.step;
    const double step = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, step);
    const double correction2 = 1.0 - std::pow(cfg.beta2, step);
    for (const auto& [name, grad] : gradients) {
        Tensor& param = params.get(name);
        auto [m_it, m_new] = state.first_moment.try_emplace(name, Tensor(param.shape(), 0.0));
        auto [v_it, v_new] = state.second_moment.try_emplace(name, Tensor(param.shape(), 0.0));
        Tensor& m = m_it->second;
        Tensor& v = v_it->second;
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            param[i] -= cfg.step_size * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

}  // namespace csf::num
