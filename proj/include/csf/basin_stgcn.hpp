#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "csf/autodiff.hpp"
#include "csf/flowgraph.hpp"
#include "csf/rng.hpp"

namespace csf::stgcn {

enum class Activation { Relu, Linear };

struct BasinConfig {
    std::size_t input_features = 1;
    std::size_t hidden_dim = 32;
    std::size_t kernel_width = 3;
    std::size_t blocks = 2;
    std::size_t output_steps = 1;
};

/// Adds "basin.*" parameters. Each block holds a causal temporal kernel, the
/// spatial weight W_s, and a second temporal kernel; the head maps the last
/// step's hidden state to output_steps values per node.
void init_params(num::ParamStore& params, const BasinConfig& config, Rng& rng);

/**
 * h'_i = act( sum_j m[i][j] * h_j * W_s ) for every time step; h is
 * [..., n, f] and the result [..., n, f'].
 */
num::Var spatial_conv(num::Var h, const num::Tensor& m, num::Var w_s, Activation act = Activation::Relu);

/// Per-node causal convolution over time of h [B, T, n, f] with kernel
/// [k, f, f'] and bias [f']. Throws WindowTooShort when T < k.
num::Var temporal_conv(num::Var h, num::Var kernel, num::Var bias, Activation act = Activation::Relu);

/// window [B, T, n, features] -> predictions [B, n, output_steps].
num::Var forward(num::Tape& tape, const num::ParamStore& params, const BasinConfig& config, num::Var window,
                 const num::Tensor& m);

/// Value-level forward; window [T, n, f] gives [n, out], [B, T, n, f] gives [B, n, out].
num::Tensor predict(const num::ParamStore& params, const BasinConfig& config, const num::Tensor& window,
                    const num::Tensor& m);

/// Mean squared error over stations and horizon steps.
num::Var prediction_loss(num::Var y, num::Var y_hat);
double prediction_loss(const num::Tensor& y, const num::Tensor& y_hat);

/// lambda * station + (1 - lambda) * prediction; lambda must lie in [0, 1].
num::Var total_loss(num::Var station, num::Var prediction, double lambda);
double total_loss(double station, double prediction, double lambda);

/// Rows and columns of m restricted to `nodes` (in the given order).
num::Tensor restrict_matrix(const num::Tensor& m, const std::vector<std::size_t>& nodes);

struct MaskedPrediction {
    std::vector<std::size_t> targets;
    num::Tensor predictions;                 // [targets, output_steps]
    std::vector<std::size_t> evaluated_nodes;  // upstream closure that was computed
};

/**
 * Forward pass over the subgraph induced by upstream_closure(targets) only.
 * Rows of m for closure nodes reference closure nodes only, so the result
 * equals the full-graph forward at the targets.
 */
MaskedPrediction masked_inference(const num::ParamStore& params, const BasinConfig& config,
                                  const num::Tensor& window, const num::Tensor& m, const flow::FlowGraph& graph,
                                  const std::set<std::size_t>& targets);

}  // namespace csf::stgcn
