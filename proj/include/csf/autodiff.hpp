#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "csf/params.hpp"
#include "csf/tensor.hpp"

namespace csf::num {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/**
 * Records forward values and their local backward rules; backward() walks the
 * record in reverse, accumulating gradients only into values that depend on a
 * leaf marked as requiring gradient. Values are never mutated after recording.
 */
class Tape {
public:
    using BackwardFn =
        std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Differentiable leaf without a name; read its gradient with grad().
    Var leaf(Tensor value);
    /// Differentiable leaf bound to a named parameter.
    Var param(const ParamStore& store, const std::string& name);

    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

    void backward(Var loss);

    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    const Tensor& value(Var v) const { return nodes_[v.id()].value; }
    /// Gradient of the last backward() w.r.t. v; zeros when v did not contribute.
    Tensor grad(Var v) const;
    /// Gradients of every named parameter that was bound with param().
    Gradients gradients() const;

    /// Accumulation target for v's gradient, or nullptr when v needs none.
    Tensor* grad_slot(Var v);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;  // deque keeps value references stable as ops record
    std::vector<std::pair<std::string, std::size_t>> named_;
};

// -- forward operations ------------------------------------------------------
// All take and return Vars on the same tape, throw ShapeMismatch on
// incompatible operands and NonFinite when a result is not finite.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// x + b with b of length x.cols() broadcast over rows.
Var add_bias(Var x, Var bias);
/// Subgradient at 0 is 0.
Var relu(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
/// Elementwise clamp; gradient passes only where lo < x < hi.
Var clamp(Var x, double lo, double hi);
Var reshape(Var x, Shape shape);

/**
 * Causal convolution along time.
 *
 * x has shape [B, T, N, C_in] (or [T] with a rank-1 kernel) and kernel has
 * shape [K, C_in, C_out]; out[b,t,n,:] = sum_k x[b,t-k,n,:] * kernel[k], with
 * zero padding on the past side only, so out at t depends on inputs <= t.
 */
Var causal_conv1d(Var x, Var kernel);

/// Sum of all entries (rank-0 result), or along axis 0/1 of a rank-2 tensor.
Var reduce_sum(Var x);
Var reduce_sum(Var x, std::size_t axis);
Var reduce_mean(Var x);
Var reduce_mean(Var x, std::size_t axis);

/// Rows of x (viewed as rows() x cols()) picked by index; result [len, cols].
Var gather_rows(Var x, std::span<const std::size_t> indices);
/// Concatenation of rank-2 tensors along axis 0 or 1.
Var concat(std::span<const Var> xs, std::size_t axis);

/**
 * Graph message passing over stacked node blocks: x is [..., N, C] and every
 * consecutive N-row block is left-multiplied by the constant N x N matrix m.
 */
Var graph_aggregate(Var x, const Tensor& m);

/// Mean squared error between same-shaped tensors.
Var mse(Var prediction, Var target);

}  // namespace csf::num
