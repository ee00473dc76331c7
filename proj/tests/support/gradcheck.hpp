#pragma once

// Central finite-difference oracle. It only evaluates the loss, so it checks
// every backward rule independently of how the gradients are computed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "csf/autodiff.hpp"
#include "csf/rng.hpp"

namespace csf::testing {

using LossFn = std::function<num::Var(num::Tape&, const std::vector<num::Var>&)>;

inline double loss_at(const LossFn& fn, const std::vector<num::Tensor>& inputs) {
    num::Tape tape;
    std::vector<num::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    return fn(tape, vars).value().item();
}

/// Largest elementwise relative error between analytic and central-difference
/// gradients over every input. Near-zero pairs fall back to absolute error.
inline double gradcheck(const LossFn& fn, std::vector<num::Tensor> inputs, double eps = 1e-5) {
    num::Tape tape;
    std::vector<num::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    num::Var loss = fn(tape, vars);
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const num::Tensor analytic = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + eps;
            const double up = loss_at(fn, inputs);
            inputs[k][i] = saved - eps;
            const double down = loss_at(fn, inputs);
            inputs[k][i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
            const double err = scale > 1e-6 ? std::abs(numeric - analytic[i]) / scale
                                            : std::abs(numeric - analytic[i]);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/// Uniform values in [lo, hi] with magnitude at least `gap` (keeps relu and
/// clamp kinks out of the finite-difference stencil).
inline num::Tensor random_tensor(num::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, double gap = 0.05) {
    num::Tensor t(std::move(shape));
    for (double& v : t.data()) {
        do {
            v = rng.uniform(lo, hi);
        } while (std::abs(v) < gap);
    }
    return t;
}

}  // namespace csf::testing
