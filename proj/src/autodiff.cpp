#include "csf/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "csf/error.hpp"

namespace csf::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_mat(const Tensor& t, std::size_t row0, std::size_t rows, std::size_t cols) {
    return ConstMatMap(t.ptr() + row0 * cols, static_cast<Eigen::Index>(rows),
                       static_cast<Eigen::Index>(cols));
}
MatMap as_mat(Tensor& t, std::size_t row0, std::size_t rows, std::size_t cols) {
    return MatMap(t.ptr() + row0 * cols, static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}
ConstMatMap as_mat(const Tensor& t) { return as_mat(t, 0, t.rows(), t.cols()); }
MatMap as_mat(Tensor& t) { return as_mat(t, 0, t.rows(), t.cols()); }
ConstVecMap as_vec(const Tensor& t) {
    return ConstVecMap(t.ptr(), static_cast<Eigen::Index>(t.size()));
}
VecMap as_vec(Tensor& t) { return VecMap(t.ptr(), static_cast<Eigen::Index>(t.size())); }

void require(bool ok, const char* op, const std::string& detail) {
    if (!ok) fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + detail);
}

void same_tape(Var a, Var b, const char* op) {
    require(&a.tape() == &b.tape(), op, "operands live on different tapes");
}

template <typename F>
Tensor map_values(const Tensor& in, F&& f) {
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return out;
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }

// -- Tape -------------------------------------------------------------------------

Var Tape::constant(Tensor value) { return record(std::move(value), {}, nullptr, "constant"); }

Var Tape::leaf(Tensor value) {
    Var v = record(std::move(value), {}, nullptr, "leaf");
    nodes_[v.id()].requires_grad = true;
    return v;
}

Var Tape::param(const ParamStore& store, const std::string& name) {
    Var v = leaf(store.get(name));
    named_.emplace_back(name, v.id());
    return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
    if (!value.all_finite())
        fail(ErrorKind::NonFinite, std::string(op) + " produced a non-finite value");
    Node node;
    node.value = std::move(value);
    for (const Var& in : inputs) node.requires_grad = node.requires_grad || requires_grad(in);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_slot(Var v) {
    Node& node = nodes_[v.id()];
    if (!node.requires_grad) return nullptr;
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape(), 0.0);
        node.has_grad = true;
    }
    return &node.grad;
}

void Tape::backward(Var loss) {
    if (&loss.tape() != this) fail(ErrorKind::Internal, "loss recorded on another tape");
    if (value(loss).size() != 1)
        fail(ErrorKind::NotScalarLoss, "loss has shape " + shape_str(value(loss).shape()));
    for (Node& node : nodes_) {
        node.has_grad = false;
        node.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_slot(loss)->fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.has_grad || !node.backward) continue;
        node.backward(*this, node.value, node.grad);
    }
}

Tensor Tape::grad(Var v) const {
    const Node& node = nodes_[v.id()];
    if (node.has_grad) return node.grad;
    return Tensor(node.value.shape(), 0.0);
}

Gradients Tape::gradients() const {
    Gradients out;
    for (const auto& [name, id] : named_) {
        const Node& node = nodes_[id];
        Tensor g = node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0);
        auto [it, inserted] = out.emplace(name, g);
        if (!inserted) as_vec(it->second) += as_vec(g);
    }
    return out;
}

// -- operations ---------------------------------------------------------------------

Var matmul(Var a, Var b) {
    same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul",
            shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    Tensor out(Shape{av.dim(0), bv.dim(1)});
    as_mat(out).noalias() = as_mat(av) * as_mat(bv);
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* ga = t.grad_slot(a))
            as_mat(*ga).noalias() += as_mat(g) * as_mat(b.value()).transpose();
        if (Tensor* gb = t.grad_slot(b))
            as_mat(*gb).noalias() += as_mat(a.value()).transpose() * as_mat(g);
    }, "matmul");
}

Var add(Var a, Var b) {
    same_tape(a, b, "add");
    require(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    as_vec(out) = as_vec(a.value()) + as_vec(b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* ga = t.grad_slot(a)) as_vec(*ga) += as_vec(g);
        if (Tensor* gb = t.grad_slot(b)) as_vec(*gb) += as_vec(g);
    }, "add");
}

Var sub(Var a, Var b) {
    same_tape(a, b, "sub");
    require(a.shape() == b.shape(), "sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    as_vec(out) = as_vec(a.value()) - as_vec(b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* ga = t.grad_slot(a)) as_vec(*ga) += as_vec(g);
        if (Tensor* gb = t.grad_slot(b)) as_vec(*gb) -= as_vec(g);
    }, "sub");
}

Var mul(Var a, Var b) {
    same_tape(a, b, "mul");
    require(a.shape() == b.shape(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    as_vec(out) = as_vec(a.value()).cwiseProduct(as_vec(b.value()));
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* ga = t.grad_slot(a)) as_vec(*ga) += as_vec(g).cwiseProduct(as_vec(b.value()));
        if (Tensor* gb = t.grad_slot(b)) as_vec(*gb) += as_vec(g).cwiseProduct(as_vec(a.value()));
    }, "mul");
}

Var scale(Var x, double factor) {
    Tensor out(x.shape());
    as_vec(out) = as_vec(x.value()) * factor;
    return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(x)) as_vec(*gx) += as_vec(g) * factor;
    }, "scale");
}

Var add_bias(Var x, Var bias) {
    same_tape(x, bias, "add_bias");
    const Tensor& xv = x.value();
    require(bias.value().rank() == 1 && bias.value().size() == xv.cols(), "add_bias",
            shape_str(xv.shape()) + " + " + shape_str(bias.shape()));
    Tensor out = xv;
    as_mat(out).rowwise() += as_vec(bias.value()).transpose();
    return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(x)) as_vec(*gx) += as_vec(g);
        if (Tensor* gb = t.grad_slot(bias)) as_vec(*gb) += as_mat(g).colwise().sum().transpose();
    }, "add_bias");
}

Var relu(Var x) {
    Tensor out = map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) (*gx)[i] += g[i];
    }, "relu");
}

Var sigmoid(Var x) {
    Tensor out = map_values(x.value(), [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& s, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * s[i] * (1.0 - s[i]);
    }, "sigmoid");
}

Var exp(Var x) {
    Tensor out = map_values(x.value(), [](double v) { return std::exp(v); });
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& e, const Tensor& g) {
        as_vec(*t.grad_slot(x)) += as_vec(g).cwiseProduct(as_vec(e));
    }, "exp");
}

Var log(Var x) {
    Tensor out = map_values(x.value(), [](double v) { return std::log(v); });
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        as_vec(*t.grad_slot(x)) += as_vec(g).cwiseQuotient(as_vec(x.value()));
    }, "log");
}

Var square(Var x) {
    Tensor out = map_values(x.value(), [](double v) { return v * v; });
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        as_vec(*t.grad_slot(x)) += 2.0 * as_vec(g).cwiseProduct(as_vec(x.value()));
    }, "square");
}

Var clamp(Var x, double lo, double hi) {
    Tensor out = map_values(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
    return x.tape().record(std::move(out), {x}, [x, lo, hi](Tape& t, const Tensor&, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > lo && xv[i] < hi) (*gx)[i] += g[i];
    }, "clamp");
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        as_vec(*t.grad_slot(x)) += as_vec(g);
    }, "reshape");
}

Var causal_conv1d(Var x, Var kernel) {
    same_tape(x, kernel, "causal_conv1d");
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    if (xv.rank() == 1 && kv.rank() == 1) {
        Var x4 = reshape(x, Shape{1, xv.size(), 1, 1});
        Var k3 = reshape(kernel, Shape{kv.size(), 1, 1});
        return reshape(causal_conv1d(x4, k3), Shape{xv.size()});
    }
    require(xv.rank() == 4 && kv.rank() == 3 && xv.dim(3) == kv.dim(1), "causal_conv1d",
            "x " + shape_str(xv.shape()) + " kernel " + shape_str(kv.shape()));
    const std::size_t batch = xv.dim(0), steps = xv.dim(1), nodes = xv.dim(2);
    const std::size_t cin = kv.dim(1), cout = kv.dim(2), width = kv.dim(0);
    Tensor out(Shape{batch, steps, nodes, cout});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < width && k < steps; ++k) {
            const std::size_t rows = (steps - k) * nodes;
            const std::size_t src = b * steps * nodes;
            const std::size_t dst = src + k * nodes;
            as_mat(out, dst, rows, cout).noalias() +=
                as_mat(xv, src, rows, cin) * as_mat(kv, k * cin, cin, cout);
        }
    }
    return x.tape().record(std::move(out), {x, kernel},
        [x, kernel, batch, steps, nodes, cin, cout, width](Tape& t, const Tensor&, const Tensor& g) {
            Tensor* gx = t.grad_slot(x);
            Tensor* gk = t.grad_slot(kernel);
            const Tensor& xv = x.value();
            const Tensor& kv = kernel.value();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t k = 0; k < width && k < steps; ++k) {
                    const std::size_t rows = (steps - k) * nodes;
                    const std::size_t src = b * steps * nodes;
                    const std::size_t dst = src + k * nodes;
                    if (gx)
                        as_mat(*gx, src, rows, cin).noalias() +=
                            as_mat(g, dst, rows, cout) * as_mat(kv, k * cin, cin, cout).transpose();
                    if (gk)
                        as_mat(*gk, k * cin, cin, cout).noalias() +=
                            as_mat(xv, src, rows, cin).transpose() * as_mat(g, dst, rows, cout);
                }
            }
        }, "causal_conv1d");
}

Var reduce_sum(Var x) {
    Tensor out = Tensor::scalar(as_vec(x.value()).sum());
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        as_vec(*t.grad_slot(x)).array() += g[0];
    }, "reduce_sum");
}

Var reduce_sum(Var x, std::size_t axis) {
    const Tensor& xv = x.value();
    require(xv.rank() == 2 && axis < 2, "reduce_sum", "axis reduction needs a rank-2 tensor");
    Tensor out(Shape{axis == 0 ? xv.dim(1) : xv.dim(0)});
    if (axis == 0)
        as_vec(out) = as_mat(xv).colwise().sum().transpose();
    else
        as_vec(out) = as_mat(xv).rowwise().sum();
    return x.tape().record(std::move(out), {x}, [x, axis](Tape& t, const Tensor&, const Tensor& g) {
        MatMap gx = as_mat(*t.grad_slot(x));
        if (axis == 0)
            gx.rowwise() += as_vec(g).transpose();
        else
            gx.colwise() += as_vec(g);
    }, "reduce_sum");
}

Var reduce_mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    require(n > 0, "reduce_mean", "empty tensor");
    return scale(reduce_sum(x), 1.0 / n);
}

Var reduce_mean(Var x, std::size_t axis) {
    const Tensor& xv = x.value();
    require(xv.rank() == 2 && axis < 2, "reduce_mean", "axis reduction needs a rank-2 tensor");
    const double n = static_cast<double>(xv.dim(axis));
    require(n > 0, "reduce_mean", "empty axis");
    return scale(reduce_sum(x, axis), 1.0 / n);
}

Var gather_rows(Var x, std::span<const std::size_t> indices) {
    const Tensor& xv = x.value();
    const std::size_t cols = xv.cols();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Tensor out(Shape{idx.size(), cols});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < xv.rows(), "gather_rows", "row index out of range");
        std::copy_n(xv.ptr() + idx[i] * cols, cols, out.ptr() + i * cols);
    }
    return x.tape().record(std::move(out), {x}, [x, idx, cols](Tape& t, const Tensor&, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c) (*gx)[idx[i] * cols + c] += g[i * cols + c];
    }, "gather_rows");
}

Var concat(std::span<const Var> xs, std::size_t axis) {
    require(!xs.empty() && axis < 2, "concat", "needs at least one operand and axis 0 or 1");
    std::vector<Var> inputs(xs.begin(), xs.end());
    const std::size_t fixed = inputs[0].value().dim(axis == 0 ? 1 : 0);
    std::size_t total = 0;
    for (const Var& v : inputs) {
        same_tape(inputs[0], v, "concat");
        require(v.value().rank() == 2 && v.value().dim(axis == 0 ? 1 : 0) == fixed, "concat",
                "operand shape " + shape_str(v.shape()));
        total += v.value().dim(axis);
    }
    Tensor out(axis == 0 ? Shape{total, fixed} : Shape{fixed, total});
    std::size_t offset = 0;
    for (const Var& v : inputs) {
        const Tensor& value = v.value();
        const std::size_t extent = value.dim(axis);
        if (axis == 0)
            as_mat(out, offset, extent, fixed) = as_mat(value);
        else
            as_mat(out).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(extent)) =
                as_mat(value);
        offset += extent;
    }
    return inputs[0].tape().record(std::move(out), inputs,
        [inputs, axis, fixed](Tape& t, const Tensor&, const Tensor& g) {
            std::size_t offset = 0;
            for (const Var& v : inputs) {
                const std::size_t extent = v.value().dim(axis);
                if (Tensor* gv = t.grad_slot(v)) {
                    if (axis == 0)
                        as_mat(*gv) += as_mat(g, offset, extent, fixed);
                    else
                        as_mat(*gv) += as_mat(g).middleCols(static_cast<Eigen::Index>(offset),
                                                            static_cast<Eigen::Index>(extent));
                }
                offset += extent;
            }
        }, "concat");
}

Var graph_aggregate(Var x, const Tensor& m) {
    const Tensor& xv = x.value();
    require(m.rank() == 2 && m.dim(0) == m.dim(1), "graph_aggregate", "matrix must be square");
    const std::size_t nodes = m.dim(0);
    require(xv.rank() >= 2 && xv.dim(xv.rank() - 2) == nodes, "graph_aggregate",
            "x " + shape_str(xv.shape()) + " vs matrix " + shape_str(m.shape()));
    const std::size_t cols = xv.cols();
    const std::size_t blocks = xv.rows() / nodes;
    Tensor out(xv.shape());
    for (std::size_t s = 0; s < blocks; ++s)
        as_mat(out, s * nodes, nodes, cols).noalias() = as_mat(m) * as_mat(xv, s * nodes, nodes, cols);
    return x.tape().record(std::move(out), {x}, [x, m, nodes, cols, blocks](Tape& t, const Tensor&, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t s = 0; s < blocks; ++s)
            as_mat(*gx, s * nodes, nodes, cols).noalias() +=
                as_mat(m).transpose() * as_mat(g, s * nodes, nodes, cols);
    }, "graph_aggregate");
}

Var mse(Var prediction, Var target) {
    same_tape(prediction, target, "mse");
    require(prediction.shape() == target.shape(), "mse",
            shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
    const double n = static_cast<double>(prediction.value().size());
    require(n > 0, "mse", "empty operands");
    const double value = (as_vec(prediction.value()) - as_vec(target.value())).squaredNorm() / n;
    return prediction.tape().record(Tensor::scalar(value), {prediction, target},
        [prediction, target, n](Tape& t, const Tensor&, const Tensor& g) {
            const Eigen::VectorXd diff =
                (as_vec(prediction.value()) - as_vec(target.value())) * (2.0 * g[0] / n);
            if (Tensor* gp = t.grad_slot(prediction)) as_vec(*gp) += diff;
            if (Tensor* gt = t.grad_slot(target)) as_vec(*gt) -= diff;
        }, "mse");
}

}  // namespace csf::num
