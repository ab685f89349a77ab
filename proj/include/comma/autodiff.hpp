#pragma once

#include "comma/masks.hpp"
#include "comma/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace comma {

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Records a forward computation so that vector-Jacobian products can be
/// replayed in reverse. Values are immutable once recorded.
///
/// Leaves come in two flavours: named parameters, whose gradients are
/// reported by gradients(), and anonymous inputs, whose adjoints can be
/// read back with adjoint(). The latter lets a computation be split over
/// several tapes: the adjoint of one tape's input seeds another tape's
/// output.
class Tape {
public:
    Var input(Tensor value);
    Var parameter(std::string name, Tensor value);

    const Tensor& value(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double s);
    Var add_column(Var x, Var bias);
    Var relu(Var x);
    Var masked_softmax(Var logits, const AttentionMask& mask);
    Var slice_columns(Var x, std::size_t begin, std::size_t end);
    Var concat_columns(Var a, Var b);
    /// Mean over columns: m×n -> m×1.
    Var mean_columns(Var x);
    /// Inner product of two equally shaped tensors, as a 1×1 tensor.
    Var dot(Var a, Var b);
    /// Stacks 1×1 values into a k×1 column.
    Var stack(std::span<const Var> scalars);
    /// log Σ exp over all entries, as a 1×1 tensor.
    Var logsumexp(Var x);
    /// Single entry (row r, column c) as a 1×1 tensor.
    Var entry(Var x, std::size_t r, std::size_t c);
    Var sum(Var x);

    Var linear(Var x, Var weight, Var bias);
    Var mlp2(Var x, Var w1, Var b1, Var w2, Var b2);

    /// Reverse sweep. Each seed is (output, upstream gradient of the same
    /// shape); seeds on the same output accumulate. May be called once.
    void backward(std::span<const std::pair<Var, Tensor>> seeds);
    /// Convenience: seed a scalar (1×1) output with 1.
    void backward(Var scalar_output);

    /// Adjoint of any recorded value after backward(). Values that the
    /// seeds do not reach have a zero adjoint.
    const Tensor& adjoint(Var v) const;

    /// Adjoints of all named parameters, keyed by name.
    Gradients gradients() const;

private:
    enum class Op {
        Input, Parameter, MatMul, Transpose, Add, Sub, Scale, AddColumn, Relu,
        MaskedSoftmax, SliceColumns, ConcatColumns, MeanColumns, Dot, Stack,
        LogSumExp, Entry, Sum,
    };

    struct Node {
        Op op = Op::Input;
        std::vector<std::size_t> inputs;
        Tensor value;
        double scalar = 0.0;
        std::size_t a = 0;
        std::size_t b = 0;
        std::string name;
        AttentionMask mask;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    void propagate(const Node& n, const Tensor& grad);

    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;
    bool backward_done_ = false;
};

}  // namespace comma
