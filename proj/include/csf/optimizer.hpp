#pragma once

#include <cstdint>

#include "csf/params.hpp"

namespace csf::num {

struct AdamConfig {
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators keyed like the parameters they track.
struct OptimizerState {
    AdamConfig config;
    Gradients first_moment;
    Gradients second_moment;
    std::uint64_t step = 0;
};

/**
 * One adaptive-moment update. Only parameters present in `gradients` move;
 * moments are created lazily with the parameter's shape. Bias correction uses
 * the post-increment step count.
 */
void optimizer_step(ParamStore& params, const Gradients& gradients, OptimizerState& state);

}  // namespace csf::num
