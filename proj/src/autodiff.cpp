#include "comma/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace comma {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
    if (dst.shape() != src.shape()) {
        throw std::logic_error("adjoint shape mismatch " + shape_string(dst.shape()) + " vs " +
                               shape_string(src.shape()));
    }
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

Tensor scalar_tensor(double v) {
    return Tensor({1, 1}, v);
}

}  // namespace

Var Tape::push(Node node) {
    node.value.require_finite("tape value");
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.id >= nodes_.size()) {
        throw std::out_of_range("variable does not belong to this tape");
    }
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const {
    return node(v).value;
}

Var Tape::input(Tensor value) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::parameter(std::string name, Tensor value) {
    Node n;
    n.op = Op::Parameter;
    n.value = std::move(value);
    n.name = std::move(name);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.value = comma::matmul(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.value = comma::transpose(value(a));
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.value = comma::add(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.op = Op::Sub;
    n.value = comma::sub(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.value = comma::scale(value(a), s);
    n.scalar = s;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Tape::add_column(Var x, Var bias) {
    Node n;
    n.op = Op::AddColumn;
    n.value = comma::add_column(value(x), value(bias));
    n.inputs = {x.id, bias.id};
    return push(std::move(n));
}

Var Tape::relu(Var x) {
    Node n;
    n.op = Op::Relu;
    n.value = comma::relu(value(x));
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::masked_softmax(Var logits, const AttentionMask& mask) {
    Node n;
    n.op = Op::MaskedSoftmax;
    n.value = comma::masked_softmax(value(logits), mask);
    n.mask = mask;
    n.inputs = {logits.id};
    return push(std::move(n));
}

Var Tape::slice_columns(Var x, std::size_t begin, std::size_t end) {
    Node n;
    n.op = Op::SliceColumns;
    n.value = comma::slice_columns(value(x), begin, end);
    n.a = begin;
    n.b = end;
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::concat_columns(Var a, Var b) {
    Node n;
    n.op = Op::ConcatColumns;
    n.value = comma::concat_columns(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::mean_columns(Var x) {
    Node n;
    n.op = Op::MeanColumns;
    const Tensor& v = value(x);
    if (v.rank() != 2) {
        throw std::invalid_argument("mean_columns: expected a matrix");
    }
    n.value = comma::mean_over(v, {1}).reshaped({v.rows(), 1});
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
    Node n;
    n.op = Op::Dot;
    n.value = scalar_tensor(comma::sum(comma::hadamard(value(a), value(b))));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::stack(std::span<const Var> scalars) {
    if (scalars.empty()) {
        throw std::invalid_argument("stack: no values");
    }
    Node n;
    n.op = Op::Stack;
    n.value = Tensor({scalars.size(), 1});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        const Tensor& s = value(scalars[i]);
        if (s.size() != 1) {
            throw std::invalid_argument("stack: expected 1x1 values");
        }
        n.value[i] = s[0];
        n.inputs.push_back(scalars[i].id);
    }
    return push(std::move(n));
}

Var Tape::logsumexp(Var x) {
    Node n;
    n.op = Op::LogSumExp;
    const Tensor& v = value(x);
    double peak = -std::numeric_limits<double>::infinity();
    for (auto e : v.data()) {
        peak = std::max(peak, e);
    }
    double total = 0.0;
    for (auto e : v.data()) {
        total += std::exp(e - peak);
    }
    n.value = scalar_tensor(peak + std::log(total));
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::entry(Var x, std::size_t r, std::size_t c) {
    const Tensor& v = value(x);
    if (v.rank() != 2 || r >= v.rows() || c >= v.cols()) {
        throw std::out_of_range("entry: index outside matrix");
    }
    Node n;
    n.op = Op::Entry;
    n.value = scalar_tensor(v(r, c));
    n.a = r;
    n.b = c;
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::sum(Var x) {
    Node n;
    n.op = Op::Sum;
    n.value = scalar_tensor(comma::sum(value(x)));
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::linear(Var x, Var weight, Var bias) {
    return add_column(matmul(weight, x), bias);
}

Var Tape::mlp2(Var x, Var w1, Var b1, Var w2, Var b2) {
    return linear(relu(linear(x, w1, b1)), w2, b2);
}

void Tape::backward(Var scalar_output) {
    if (value(scalar_output).size() != 1) {
        throw std::invalid_argument("backward: output is not a scalar");
    }
    const std::pair<Var, Tensor> seed{scalar_output, Tensor(value(scalar_output).shape(), 1.0)};
    backward(std::span(&seed, 1));
}

void Tape::backward(std::span<const std::pair<Var, Tensor>> seeds) {
    if (backward_done_) {
        throw std::logic_error("backward already ran on this tape");
    }
    backward_done_ = true;
    adjoints_.clear();
    adjoints_.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        adjoints_.emplace_back(n.value.shape(), 0.0);
    }
    std::size_t highest = 0;
    for (const auto& [v, g] : seeds) {
        if (v.id >= nodes_.size()) {
            throw std::out_of_range("seed does not belong to this tape");
        }
        if (g.shape() != nodes_[v.id].value.shape()) {
            throw std::invalid_argument("seed shape " + shape_string(g.shape()) + " does not match value " +
                                        shape_string(nodes_[v.id].value.shape()));
        }
        g.require_finite("backward seed");
        add_into(adjoints_[v.id], g);
        highest = std::max(highest, v.id);
    }
    if (seeds.empty()) {
        return;
    }
    for (std::size_t i = highest + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (n.inputs.empty()) {
            continue;
        }
        propagate(n, adjoints_[i]);
    }
}

void Tape::propagate(const Node& n, const Tensor& grad) {
    auto in = [&](std::size_t k) -> Tensor& { return adjoints_[n.inputs[k]]; };
    auto val = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

    switch (n.op) {
    case Op::Input:
    case Op::Parameter:
        break;
    case Op::MatMul:
        // C = A B: dA = dC Bᵀ, dB = Aᵀ dC
        add_into(in(0), comma::matmul(grad, comma::transpose(val(1))));
        add_into(in(1), comma::matmul(comma::transpose(val(0)), grad));
        break;
    case Op::Transpose:
        add_into(in(0), comma::transpose(grad));
        break;
    case Op::Add:
        add_into(in(0), grad);
        add_into(in(1), grad);
        break;
    case Op::Sub:
        add_into(in(0), grad);
        add_into(in(1), comma::scale(grad, -1.0));
        break;
    case Op::Scale:
        add_into(in(0), comma::scale(grad, n.scalar));
        break;
    case Op::AddColumn: {
        add_into(in(0), grad);
        Tensor& db = in(1);
        for (std::size_t r = 0; r < grad.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < grad.cols(); ++c) {
                s += grad(r, c);
            }
            db(r, 0) += s;
        }
        break;
    }
    case Op::Relu: {
        Tensor& dx = in(0);
        const Tensor& x = val(0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] > 0.0) {
                dx[i] += grad[i];
            }
        }
        break;
    }
    case Op::MaskedSoftmax: {
        // dx_ij = y_ij (dy_ij - Σ_k y_ik dy_ik) on allowed entries.
        Tensor& dx = in(0);
        const Tensor& y = n.value;
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double inner = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
                inner += y(r, c) * grad(r, c);
            }
            for (std::size_t c = 0; c < y.cols(); ++c) {
                if (n.mask.allowed(r, c)) {
                    dx(r, c) += y(r, c) * (grad(r, c) - inner);
                }
            }
        }
        break;
    }
    case Op::SliceColumns: {
        Tensor& dx = in(0);
        for (std::size_t r = 0; r < grad.rows(); ++r) {
            for (std::size_t c = 0; c < grad.cols(); ++c) {
                dx(r, n.a + c) += grad(r, c);
            }
        }
        break;
    }
    case Op::ConcatColumns: {
        Tensor& da = in(0);
        Tensor& db = in(1);
        const std::size_t split = da.cols();
        for (std::size_t r = 0; r < grad.rows(); ++r) {
            for (std::size_t c = 0; c < grad.cols(); ++c) {
                if (c < split) {
                    da(r, c) += grad(r, c);
                } else {
                    db(r, c - split) += grad(r, c);
                }
            }
        }
        break;
    }
    case Op::MeanColumns: {
        Tensor& dx = in(0);
        const double inv = 1.0 / static_cast<double>(dx.cols());
        for (std::size_t r = 0; r < dx.rows(); ++r) {
            for (std::size_t c = 0; c < dx.cols(); ++c) {
                dx(r, c) += grad(r, 0) * inv;
            }
        }
        break;
    }
    case Op::Dot: {
        const double g = grad[0];
        add_into(in(0), comma::scale(val(1), g));
        add_into(in(1), comma::scale(val(0), g));
        break;
    }
    case Op::Stack:
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            in(k)[0] += grad[k];
        }
        break;
    case Op::LogSumExp: {
        Tensor& dx = in(0);
        const Tensor& x = val(0);
        const double lse = n.value[0];
        for (std::size_t i = 0; i < x.size(); ++i) {
            dx[i] += grad[0] * std::exp(x[i] - lse);
        }
        break;
    }
    case Op::Entry:
        in(0)(n.a, n.b) += grad[0];
        break;
    case Op::Sum:
        for (auto& v : in(0).data()) {
            v += grad[0];
        }
        break;
    }
}

const Tensor& Tape::adjoint(Var v) const {
    if (!backward_done_) {
        throw std::logic_error("adjoint requested before backward");
    }
    if (v.id >= adjoints_.size()) {
        throw std::out_of_range("variable does not belong to this tape");
    }
    return adjoints_[v.id];
}

Gradients Tape::gradients() const {
    if (!backward_done_) {
        throw std::logic_error("gradients requested before backward");
    }
    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].op == Op::Parameter) {
            accumulate(out, nodes_[i].name, adjoints_[i]);
        }
    }
    return out;
}

}  // namespace comma
