#include "mmfusion/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmfusion/error.hpp"

namespace mmfusion {

const char* to_string(OpTag tag) noexcept {
    switch (tag) {
        case OpTag::Leaf: return "leaf";
        case OpTag::MatMul: return "matmul";
        case OpTag::Add: return "add";
        case OpTag::AddRowBias: return "add_row_bias";
        case OpTag::Mul: return "mul";
        case OpTag::ScaleByScalar: return "scale_by_scalar";
        case OpTag::ScaleByConstant: return "scale_by_constant";
        case OpTag::SoftmaxRows: return "softmax_rows";
        case OpTag::Sigmoid: return "sigmoid";
        case OpTag::Relu: return "relu";
        case OpTag::ConcatCols: return "concat_cols";
        case OpTag::StackRows: return "stack_rows";
        case OpTag::MeanRows: return "mean_rows";
        case OpTag::Transpose: return "transpose";
        case OpTag::SumAll: return "sum_all";
        case OpTag::CrossEntropy: return "cross_entropy_logits";
    }
    return "unknown";
}

namespace {

// out += a * b  (a: m x k, b: k x n)
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            for (std::size_t j = 0; j < n; ++j) {
                out(i, j) += aip * b(p, j);
            }
        }
    }
}

// out += a * b^T  (a: m x n, b: k x n -> m x k)
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) {
                s += a(i, p) * b(j, p);
            }
            out(i, j) += s;
        }
    }
}

// out += a^T * b  (a: m x k, b: m x n -> k x n)
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double aip = a(i, p);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(p, j) += aip * b(i, j);
            }
        }
    }
}

void add_into(Matrix& dst, const Matrix& src) {
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
}

}  // namespace

// Private access point for the free-function primitives.
struct TapeOps {
    using Node = Tape::Node;

    static Tape& common_tape(Var a, Var b) {
        if (!a.valid() || a.tape() != b.tape()) {
            throw UsageError("operands belong to different tapes");
        }
        return *a.tape();
    }

    static Tape& tape_of(Var a) {
        if (!a.valid()) {
            throw UsageError("operation on a null Var");
        }
        return *a.tape();
    }

    static Var push(Tape& tape, Matrix value, OpTag op, std::vector<std::size_t> parents) {
        Node node;
        node.value = std::move(value);
        node.op = op;
        node.parents = std::move(parents);
        return tape.push(std::move(node));
    }

    static Var push(Tape& tape, Node node) { return tape.push(std::move(node)); }
};

const Matrix& Var::value() const {
    if (tape_ == nullptr) {
        throw UsageError("value() on a null Var");
    }
    return tape_->value(*this);
}

const Matrix& Var::grad() const {
    if (tape_ == nullptr) {
        throw UsageError("grad() on a null Var");
    }
    return tape_->grad(*this);
}

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw DimensionError("scalar() on a " + v.shape_string() + " node");
    }
    return v(0, 0);
}

Var Tape::leaf(Matrix value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.op = OpTag::Leaf;
    node.requires_grad = requires_grad;
    return push(std::move(node));
}

void Tape::check_owned(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
        throw UsageError("Var does not belong to this tape");
    }
}

Var Tape::push(Node node) {
    if (node.value.empty()) {
        throw DimensionError(std::string(to_string(node.op)) + ": empty result");
    }
    if (!node.value.all_finite()) {
        throw NumericError(std::string(to_string(node.op)) + " produced a non-finite value");
    }
    if (node.op != OpTag::Leaf) {
        node.requires_grad = std::any_of(node.parents.begin(), node.parents.end(),
                                         [this](std::size_t p) { return nodes_[p].requires_grad; });
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
}

const Matrix& Tape::grad(Var v) const {
    check_owned(v);
    const Node& node = nodes_[v.id()];
    if (!node.requires_grad) {
        throw UsageError("grad() on a node that does not require grad");
    }
    if (node.grad.empty()) {
        throw UsageError("grad() before backward()");
    }
    return node.grad;
}

bool Tape::requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
}

OpTag Tape::op(Var v) const {
    check_owned(v);
    return nodes_[v.id()].op;
}

std::span<const std::size_t> Tape::parents(Var v) const {
    check_owned(v);
    return nodes_[v.id()].parents;
}

Matrix& Tape::grad_slot(std::size_t index) {
    Node& node = nodes_[index];
    if (node.grad.empty()) {
        node.grad = Matrix(node.value.rows(), node.value.cols());
    }
    return node.grad;
}

void Tape::zero_grad() {
    for (Node& node : nodes_) {
        if (!node.grad.empty()) {
            std::fill(node.grad.values().begin(), node.grad.values().end(), 0.0);
        }
    }
}

void Tape::backward(Var root) {
    check_owned(root);
    const Matrix& rv = nodes_[root.id()].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw UsageError("backward() needs a 1x1 root, got " + rv.shape_string());
    }
    if (!nodes_[root.id()].requires_grad) {
        return;
    }
    for (std::size_t i = 0; i <= root.id(); ++i) {
        if (nodes_[i].requires_grad) {
            grad_slot(i);
        }
    }
    nodes_[root.id()].grad(0, 0) += 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        if (nodes_[i].requires_grad && nodes_[i].op != OpTag::Leaf) {
            propagate(i);
        }
    }
}

void Tape::propagate(std::size_t index) {
    const Node& node = nodes_[index];
    const Matrix& up = node.grad;
    const auto& ps = node.parents;
    auto wants = [this](std::size_t p) { return nodes_[p].requires_grad; };

    switch (node.op) {
        case OpTag::Leaf:
            break;
        case OpTag::MatMul: {
            const Matrix& a = nodes_[ps[0]].value;
            const Matrix& b = nodes_[ps[1]].value;
            if (wants(ps[0])) gemm_nt_acc(up, b, grad_slot(ps[0]));
            if (wants(ps[1])) gemm_tn_acc(a, up, grad_slot(ps[1]));
            break;
        }
        case OpTag::Add:
            if (wants(ps[0])) add_into(grad_slot(ps[0]), up);
            if (wants(ps[1])) add_into(grad_slot(ps[1]), up);
            break;
        case OpTag::AddRowBias:
            if (wants(ps[0])) add_into(grad_slot(ps[0]), up);
            if (wants(ps[1])) {
                Matrix& gb = grad_slot(ps[1]);
                for (std::size_t r = 0; r < up.rows(); ++r) {
                    for (std::size_t c = 0; c < up.cols(); ++c) {
                        gb(0, c) += up(r, c);
                    }
                }
            }
            break;
        case OpTag::Mul: {
            const Matrix& a = nodes_[ps[0]].value;
            const Matrix& b = nodes_[ps[1]].value;
            if (wants(ps[0])) {
                auto g = grad_slot(ps[0]).values();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += up.values()[i] * b.values()[i];
            }
            if (wants(ps[1])) {
                auto g = grad_slot(ps[1]).values();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += up.values()[i] * a.values()[i];
            }
            break;
        }
        case OpTag::ScaleByScalar: {
            const Matrix& a = nodes_[ps[0]].value;
            const double s = nodes_[ps[1]].value(0, 0);
            if (wants(ps[0])) {
                auto g = grad_slot(ps[0]).values();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * up.values()[i];
            }
            if (wants(ps[1])) {
                double acc = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * up.values()[i];
                grad_slot(ps[1])(0, 0) += acc;
            }
            break;
        }
        case OpTag::ScaleByConstant: {
            auto g = grad_slot(ps[0]).values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.constant * up.values()[i];
            break;
        }
        case OpTag::SoftmaxRows: {
            const Matrix& y = node.value;
            Matrix& g = grad_slot(ps[0]);
            for (std::size_t r = 0; r < y.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < y.cols(); ++c) dot += up(r, c) * y(r, c);
                for (std::size_t c = 0; c < y.cols(); ++c) g(r, c) += y(r, c) * (up(r, c) - dot);
            }
            break;
        }
        case OpTag::Sigmoid: {
            auto y = node.value.values();
            auto g = grad_slot(ps[0]).values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += y[i] * (1.0 - y[i]) * up.values()[i];
            break;
        }
        case OpTag::Relu: {
            auto x = nodes_[ps[0]].value.values();
            auto g = grad_slot(ps[0]).values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0) g[i] += up.values()[i];
            }
            break;
        }
        case OpTag::ConcatCols: {
            const std::size_t p = nodes_[ps[0]].value.cols();
            if (wants(ps[0])) {
                Matrix& ga = grad_slot(ps[0]);
                for (std::size_t r = 0; r < up.rows(); ++r)
                    for (std::size_t c = 0; c < p; ++c) ga(r, c) += up(r, c);
            }
            if (wants(ps[1])) {
                Matrix& gb = grad_slot(ps[1]);
                for (std::size_t r = 0; r < up.rows(); ++r)
                    for (std::size_t c = 0; c < gb.cols(); ++c) gb(r, c) += up(r, p + c);
            }
            break;
        }
        case OpTag::StackRows: {
            std::size_t offset = 0;
            for (std::size_t parent : ps) {
                const std::size_t rows = nodes_[parent].value.rows();
                if (wants(parent)) {
                    Matrix& g = grad_slot(parent);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < up.cols(); ++c) g(r, c) += up(offset + r, c);
                }
                offset += rows;
            }
            break;
        }
        case OpTag::MeanRows: {
            Matrix& g = grad_slot(ps[0]);
            const double inv = 1.0 / static_cast<double>(g.rows());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += up(0, c) * inv;
            break;
        }
        case OpTag::Transpose: {
            Matrix& g = grad_slot(ps[0]);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += up(c, r);
            break;
        }
        case OpTag::SumAll: {
            auto g = grad_slot(ps[0]).values();
            for (double& v : g) v += up(0, 0);
            break;
        }
        case OpTag::CrossEntropy: {
            const Matrix& probs = node.aux;
            Matrix& g = grad_slot(ps[0]);
            const double scale = up(0, 0) / static_cast<double>(probs.rows());
            for (std::size_t r = 0; r < probs.rows(); ++r) {
                for (std::size_t c = 0; c < probs.cols(); ++c) {
                    const double target = static_cast<int>(c) == node.labels[r] ? 1.0 : 0.0;
                    g(r, c) += (probs(r, c) - target) * scale;
                }
            }
            break;
        }
    }
}

Var matmul(Var a, Var b) {
    Tape& tape = TapeOps::common_tape(a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
    Matrix out(av.rows(), bv.cols());
    gemm_acc(av, bv, out);
    return TapeOps::push(tape, std::move(out), OpTag::MatMul, {a.id(), b.id()});
}

Var add(Var a, Var b) {
    Tape& tape = TapeOps::common_tape(a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (!av.same_shape(bv)) shape_error("add", av, bv);
    Matrix out = av;
    add_into(out, bv);
    return TapeOps::push(tape, std::move(out), OpTag::Add, {a.id(), b.id()});
}

Var add_row_bias(Var a, Var bias) {
    Tape& tape = TapeOps::common_tape(a, bias);
    const Matrix& av = a.value();
    const Matrix& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_row_bias", av, bv);
    Matrix out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
    return TapeOps::push(tape, std::move(out), OpTag::AddRowBias, {a.id(), bias.id()});
}

Var mul(Var a, Var b) {
    Tape& tape = TapeOps::common_tape(a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (!av.same_shape(bv)) shape_error("mul", av, bv);
    Matrix out = av;
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv.values()[i];
    return TapeOps::push(tape, std::move(out), OpTag::Mul, {a.id(), b.id()});
}

Var scale_by_scalar(Var a, Var s) {
    Tape& tape = TapeOps::common_tape(a, s);
    const Matrix& sv = s.value();
    if (sv.rows() != 1 || sv.cols() != 1) shape_error("scale_by_scalar", a.value(), sv);
    const double factor = sv(0, 0);
    Matrix out = a.value();
    for (double& v : out.values()) v *= factor;
    return TapeOps::push(tape, std::move(out), OpTag::ScaleByScalar, {a.id(), s.id()});
}

Var scale_by_constant(Var a, double factor) {
    Tape& tape = TapeOps::tape_of(a);
    Matrix out = a.value();
    for (double& v : out.values()) v *= factor;
    TapeOps::Node node;
    node.value = std::move(out);
    node.op = OpTag::ScaleByConstant;
    node.parents = {a.id()};
    node.constant = factor;
    return TapeOps::push(tape, std::move(node));
}

Var softmax_rows(Var a) {
    Tape& tape = TapeOps::tape_of(a);
    Matrix out = a.value();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double mx = out(r, 0);
        for (std::size_t c = 1; c < out.cols(); ++c) mx = std::max(mx, out(r, c));
        double total = 0.0;
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(r, c) = std::exp(out(r, c) - mx);
            total += out(r, c);
        }
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) /= total;
    }
    return TapeOps::push(tape, std::move(out), OpTag::SoftmaxRows, {a.id()});
}

Var sigmoid(Var a) {
    Tape& tape = TapeOps::tape_of(a);
    Matrix out = a.value();
    for (double& v : out.values()) {
        // Branch on sign so exp() never overflows.
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return TapeOps::push(tape, std::move(out), OpTag::Sigmoid, {a.id()});
}

Var relu(Var a) {
    Tape& tape = TapeOps::tape_of(a);
    Matrix out = a.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return TapeOps::push(tape, std::move(out), OpTag::Relu, {a.id()});
}

Var concat_cols(Var a, Var b) {
    Tape& tape = TapeOps::common_tape(a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows()) shape_error("concat_cols", av, bv);
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c);
        for (std::size_t c = 0; c < bv.cols(); ++c) out(r, av.cols() + c) = bv(r, c);
    }
    return TapeOps::push(tape, std::move(out), OpTag::ConcatCols, {a.id(), b.id()});
}

Var stack_rows(std::span<const Var> parts) {
    if (parts.empty()) {
        throw DimensionError("stack_rows: no inputs");
    }
    Tape& tape = TapeOps::tape_of(parts.front());
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    std::vector<std::size_t> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        TapeOps::common_tape(parts.front(), p);
        if (p.value().cols() != cols) shape_error("stack_rows", parts.front().value(), p.value());
        rows += p.value().rows();
        ids.push_back(p.id());
    }
    std::vector<double> values;
    values.reserve(rows * cols);
    for (Var p : parts) {
        auto v = p.value().values();
        values.insert(values.end(), v.begin(), v.end());
    }
    return TapeOps::push(tape, Matrix(rows, cols, std::move(values)), OpTag::StackRows, std::move(ids));
}

Var mean_rows(Var a) {
    Tape& tape = TapeOps::tape_of(a);
    const Matrix& av = a.value();
    Matrix out(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
    const double n = static_cast<double>(av.rows());
    for (double& v : out.values()) v /= n;
    return TapeOps::push(tape, std::move(out), OpTag::MeanRows, {a.id()});
}

Var transpose(Var a) {
    Tape& tape = TapeOps::tape_of(a);
    const Matrix& av = a.value();
    Matrix out(av.cols(), av.rows());
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(c, r) = av(r, c);
    return TapeOps::push(tape, std::move(out), OpTag::Transpose, {a.id()});
}

Var sum_all(Var a) {
    Tape& tape = TapeOps::tape_of(a);
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return TapeOps::push(tape, Matrix(1, 1, total), OpTag::SumAll, {a.id()});
}

Var cross_entropy_logits(Var logits, std::span<const int> labels) {
    Tape& tape = TapeOps::tape_of(logits);
    const Matrix& lv = logits.value();
    if (lv.cols() != 2) {
        throw DimensionError("cross_entropy_logits: expected m x 2 logits, got " + lv.shape_string());
    }
    if (labels.size() != lv.rows()) {
        throw InputError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(lv.rows()) + " rows");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) {
            throw InputError("cross_entropy_logits: label " + std::to_string(y) + " outside {0,1}");
        }
    }
    Matrix probs(lv.rows(), lv.cols());
    double loss = 0.0;
    for (std::size_t r = 0; r < lv.rows(); ++r) {
        const double mx = std::max(lv(r, 0), lv(r, 1));
        const double lse = mx + std::log(std::exp(lv(r, 0) - mx) + std::exp(lv(r, 1) - mx));
        for (std::size_t c = 0; c < 2; ++c) probs(r, c) = std::exp(lv(r, c) - lse);
        loss += lse - lv(r, static_cast<std::size_t>(labels[r]));
    }
    loss /= static_cast<double>(lv.rows());

    TapeOps::Node node;
    node.value = Matrix(1, 1, loss);
    node.aux = std::move(probs);
    node.labels.assign(labels.begin(), labels.end());
    node.op = OpTag::CrossEntropy;
    node.parents = {logits.id()};
    return TapeOps::push(tape, std::move(node));
}

namespace {

double evaluate(const ScalarGraph& f, std::span<const Matrix> params) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.constant(p));
    return f(tape, leaves).scalar();
}

}  // namespace

GradientResult analytic_gradient(const ScalarGraph& f, std::span<const Matrix> params) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.parameter(p));
    Var root = f(tape, leaves);
    tape.backward(root);

    GradientResult result;
    result.value = root.scalar();
    result.grads.reserve(params.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        // A parameter the graph never touched has no stored gradient.
        try {
            result.grads.push_back(leaves[i].grad());
        } catch (const UsageError&) {
            result.grads.emplace_back(params[i].rows(), params[i].cols());
        }
    }
    return result;
}

std::vector<Matrix> numeric_gradient(const ScalarGraph& f, std::span<const Matrix> params, double step) {
    if (!(step > 0.0)) {
        throw InputError("numeric_gradient: step must be positive");
    }
    std::vector<Matrix> work(params.begin(), params.end());
    std::vector<Matrix> grads;
    grads.reserve(work.size());
    for (std::size_t p = 0; p < work.size(); ++p) {
        Matrix g(work[p].rows(), work[p].cols());
        auto entries = work[p].values();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const double original = entries[i];
            entries[i] = original + step;
            const double up = evaluate(f, work);
            entries[i] = original - step;
            const double down = evaluate(f, work);
            entries[i] = original;
            g.values()[i] = (up - down) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double relative_error(double analytic, double numeric) noexcept {
    const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    return std::abs(analytic - numeric) / denom;
}

double finite_difference_check(const ScalarGraph& f, std::span<const Matrix> params, double step) {
    const GradientResult analytic = analytic_gradient(f, params);
    const std::vector<Matrix> numeric = numeric_gradient(f, params, step);
    double worst = 0.0;
    for (std::size_t p = 0; p < numeric.size(); ++p) {
        auto a = analytic.grads[p].values();
        auto n = numeric[p].values();
        for (std::size_t i = 0; i < n.size(); ++i) {
            worst = std::max(worst, relative_error(a[i], n[i]));
        }
    }
    return worst;
}

}  // namespace mmfusion
