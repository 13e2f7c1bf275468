#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// Every primitive appends one node to the tape holding its inputs, so the
// tape is always in topological order and backward() is a single reverse
// sweep. Shapes are validated before a node is appended.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mmfusion/matrix.hpp"

namespace mmfusion {

enum class OpTag : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    AddRowBias,
    Mul,
    ScaleByScalar,
    ScaleByConstant,
    SoftmaxRows,
    Sigmoid,
    Relu,
    ConcatCols,
    StackRows,
    MeanRows,
    Transpose,
    SumAll,
    CrossEntropy,
};

const char* to_string(OpTag tag) noexcept;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] const Matrix& grad() const;
    /// Value of a 1x1 node.
    [[nodiscard]] double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf whose gradient is tracked.
    Var parameter(Matrix value) { return leaf(std::move(value), true); }
    /// Leaf treated as a constant.
    Var constant(Matrix value) { return leaf(std::move(value), false); }
    Var leaf(Matrix value, bool requires_grad);

    [[nodiscard]] const Matrix& value(Var v) const;
    /// Accumulated gradient. Only defined for nodes that require grad.
    [[nodiscard]] const Matrix& grad(Var v) const;
    [[nodiscard]] bool requires_grad(Var v) const;
    [[nodiscard]] OpTag op(Var v) const;
    [[nodiscard]] std::span<const std::size_t> parents(Var v) const;
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    /// Accumulates d(root)/d(node) into every node that requires grad.
    /// Gradients add onto whatever is already stored; call zero_grad() to reset.
    void backward(Var root);
    void zero_grad();

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Matrix aux;  // op-specific cache (cross-entropy softmax, relu mask source)
        std::vector<int> labels;
        std::vector<std::size_t> parents;
        OpTag op = OpTag::Leaf;
        bool requires_grad = false;
        double constant = 0.0;
    };

    friend struct TapeOps;

    void check_owned(Var v) const;
    Var push(Node node);
    void propagate(std::size_t index);
    Matrix& grad_slot(std::size_t index);

    std::vector<Node> nodes_;
};

/// C = A * B.
Var matmul(Var a, Var b);
/// Elementwise A + B; shapes must match.
Var add(Var a, Var b);
/// A + bias broadcast over rows; bias is 1 x cols(A).
Var add_row_bias(Var a, Var bias);
/// Elementwise product.
Var mul(Var a, Var b);
/// Every entry of A times the 1x1 node s.
Var scale_by_scalar(Var a, Var s);
/// Every entry of A times a fixed real; no gradient flows to the factor.
Var scale_by_constant(Var a, double factor);
Var softmax_rows(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var concat_cols(Var a, Var b);
/// Vertical concatenation of equally wide nodes.
Var stack_rows(std::span<const Var> parts);
/// Column means, 1 x cols.
Var mean_rows(Var a);
Var transpose(Var a);
Var sum_all(Var a);
/// Mean over rows of -log softmax(logits)[label], logits m x 2.
Var cross_entropy_logits(Var logits, std::span<const int> labels);

/// Scalar-valued graph builder: receives the tape and one leaf per parameter.
using ScalarGraph = std::function<Var(Tape&, std::span<const Var>)>;

struct GradientResult {
    double value = 0.0;
    std::vector<Matrix> grads;
};

/// Value and reverse-mode gradient of f at params.
GradientResult analytic_gradient(const ScalarGraph& f, std::span<const Matrix> params);

/// Central-difference gradient of f at params.
std::vector<Matrix> numeric_gradient(const ScalarGraph& f, std::span<const Matrix> params, double step);

/// Relative error |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric) noexcept;

/// Largest entrywise relative error between reverse-mode and central-difference
/// gradients of f over every parameter entry.
double finite_difference_check(const ScalarGraph& f, std::span<const Matrix> params, double step);

}  // namespace mmfusion
