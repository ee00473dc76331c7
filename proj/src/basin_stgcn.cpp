#include "csf/basin_stgcn.hpp"

#include <algorithm>
#include <string>

#include "csf/error.hpp"

namespace csf::stgcn {

using num::Shape;
using num::Tensor;
using num::Var;

namespace {

std::string block_name(std::size_t b, const char* part) {
    return "basin.block" + std::to_string(b) + "." + part;
}

Var activate(Var x, Activation act) { return act == Activation::Relu ? num::relu(x) : x; }

}  // namespace

void init_params(num::ParamStore& params, const BasinConfig& c, Rng& rng) {
    std::size_t in = c.input_features;
    const std::size_t hid = c.hidden_dim, k = c.kernel_width;
    for (std::size_t b = 0; b < c.blocks; ++b) {
        params.add(block_name(b, "tconv1.w"), num::glorot_uniform(Shape{k, in, hid}, k * in, hid, rng));
        params.add(block_name(b, "tconv1.b"), Tensor(Shape{hid}));
        params.add(block_name(b, "spatial.w"), num::glorot_uniform(Shape{hid, hid}, hid, hid, rng));
        params.add(block_name(b, "tconv2.w"), num::glorot_uniform(Shape{k, hid, hid}, k * hid, hid, rng));
        params.add(block_name(b, "tconv2.b"), Tensor(Shape{hid}));
        in = hid;
    }
    params.add("basin.head.w", num::glorot_uniform(Shape{in, c.output_steps}, in, c.output_steps, rng));
    params.add("basin.head.b", Tensor(Shape{c.output_steps}));
}

Var spatial_conv(Var h, const Tensor& m, Var w_s, Activation act) {
    const Shape shape = h.shape();
    const std::size_t features = h.value().cols();
    if (w_s.value().rank() != 2 || w_s.value().dim(0) != features)
        fail(ErrorKind::ShapeMismatch, "spatial weight " + num::shape_str(w_s.shape()) + " vs hidden width " +
                                           std::to_string(features));
    Var mixed = num::graph_aggregate(h, m);
    Var flat = num::reshape(mixed, Shape{h.value().rows(), features});
    Var out = num::matmul(flat, w_s);
    Shape out_shape = shape;
    out_shape.back() = w_s.value().dim(1);
    return activate(num::reshape(out, out_shape), act);
}

Var temporal_conv(Var h, Var kernel, Var bias, Activation act) {
    const Tensor& hv = h.value();
    if (hv.rank() != 4) fail(ErrorKind::ShapeMismatch, "temporal_conv expects [B, T, n, f]");
    if (kernel.value().rank() != 3) fail(ErrorKind::ShapeMismatch, "temporal kernel must be [k, f, f']");
    if (hv.dim(1) < kernel.value().dim(0))
        fail(ErrorKind::WindowTooShort, "window of " + std::to_string(hv.dim(1)) + " steps is shorter than kernel " +
                                            std::to_string(kernel.value().dim(0)));
    return activate(num::add_bias(num::causal_conv1d(h, kernel), bias), act);
}

Var forward(num::Tape& tape, const num::ParamStore& params, const BasinConfig& c, Var window, const Tensor& m) {
    const Tensor& wv = window.value();
    if (wv.rank() != 4 || wv.dim(3) != c.input_features)
        fail(ErrorKind::ShapeMismatch, "window " + num::shape_str(wv.shape()) + " does not carry " +
                                           std::to_string(c.input_features) + " features per node");
    const std::size_t batch = wv.dim(0), steps = wv.dim(1), nodes = wv.dim(2);
    if (m.rank() != 2 || m.dim(0) != nodes || m.dim(1) != nodes)
        fail(ErrorKind::ShapeMismatch, "aggregation matrix does not match " + std::to_string(nodes) + " nodes");

    Var h = window;
    for (std::size_t b = 0; b < c.blocks; ++b) {
        h = temporal_conv(h, tape.param(params, block_name(b, "tconv1.w")), tape.param(params, block_name(b, "tconv1.b")));
        h = spatial_conv(h, m, tape.param(params, block_name(b, "spatial.w")));
        h = temporal_conv(h, tape.param(params, block_name(b, "tconv2.w")), tape.param(params, block_name(b, "tconv2.b")));
    }
    std::vector<std::size_t> last;
    last.reserve(batch * nodes);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t i = 0; i < nodes; ++i) last.push_back((bi * steps + steps - 1) * nodes + i);
    Var final_state = num::gather_rows(h, last);
    Var out = num::add_bias(num::matmul(final_state, tape.param(params, "basin.head.w")),
                            tape.param(params, "basin.head.b"));
    return num::reshape(out, Shape{batch, nodes, c.output_steps});
}

Tensor predict(const num::ParamStore& params, const BasinConfig& config, const Tensor& window, const Tensor& m) {
    num::Tape tape;
    if (window.rank() == 3) {
        Var w = tape.constant(window.reshaped(Shape{1, window.dim(0), window.dim(1), window.dim(2)}));
        Tensor out = forward(tape, params, config, w, m).value();
        return out.reshaped(Shape{out.dim(1), out.dim(2)});
    }
    return forward(tape, params, config, tape.constant(window), m).value();
}

Var prediction_loss(Var y, Var y_hat) { return num::mse(y_hat, y); }

double prediction_loss(const Tensor& y, const Tensor& y_hat) {
    if (y.shape() != y_hat.shape()) fail(ErrorKind::ShapeMismatch, "prediction_loss operands differ in shape");
    if (y.size() == 0) fail(ErrorKind::ShapeMismatch, "prediction_loss of empty tensors");
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return total / static_cast<double>(y.size());
}

Var total_loss(Var station, Var prediction, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        fail(ErrorKind::LambdaOutOfRange, "lambda=" + std::to_string(lambda) + " outside [0, 1]");
    return num::add(num::scale(station, lambda), num::scale(prediction, 1.0 - lambda));
}

double total_loss(double station, double prediction, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        fail(ErrorKind::LambdaOutOfRange, "lambda=" + std::to_string(lambda) + " outside [0, 1]");
    return lambda * station + (1.0 - lambda) * prediction;
}

Tensor restrict_matrix(const Tensor& m, const std::vector<std::size_t>& nodes) {
    Tensor out(Shape{nodes.size(), nodes.size()});
    for (std::size_t a = 0; a < nodes.size(); ++a)
        for (std::size_t b = 0; b < nodes.size(); ++b) out.at(a, b) = m.at(nodes[a], nodes[b]);
    return out;
}

MaskedPrediction masked_inference(const num::ParamStore& params, const BasinConfig& config, const Tensor& window,
                                  const Tensor& m, const flow::FlowGraph& graph, const std::set<std::size_t>& targets) {
    if (targets.empty()) fail(ErrorKind::EmptyTargets, "masked inference needs at least one target");
    if (window.rank() != 3 || window.dim(1) != graph.size())
        fail(ErrorKind::ShapeMismatch, "window must be [T, n, f] over the full graph");
    const auto closure = flow::upstream_closure(graph, targets);
    MaskedPrediction result;
    result.targets.assign(targets.begin(), targets.end());
    result.evaluated_nodes.assign(closure.begin(), closure.end());

    const std::size_t steps = window.dim(0), features = window.dim(2), sub = closure.size();
    Tensor sub_window(Shape{steps, sub, features});
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t a = 0; a < sub; ++a)
            std::copy_n(window.ptr() + (t * graph.size() + result.evaluated_nodes[a]) * features, features,
                        sub_window.ptr() + (t * sub + a) * features);
    const Tensor out = predict(params, config, sub_window, restrict_matrix(m, result.evaluated_nodes));

    result.predictions = Tensor(Shape{targets.size(), config.output_steps});
    for (std::size_t k = 0; k < result.targets.size(); ++k) {
        const auto pos = static_cast<std::size_t>(
            std::lower_bound(result.evaluated_nodes.begin(), result.evaluated_nodes.end(), result.targets[k]) -
            result.evaluated_nodes.begin());
        std::copy_n(out.ptr() + pos * config.output_steps, config.output_steps,
                    result.predictions.ptr() + k * config.output_steps);
    }
    return result;
}

}  // namespace csf::stgcn
