#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "scm/tensor.hpp"

namespace scm {

/// Reverse-mode automatic differentiation over Tensor values.
///
/// Every operation records one node; backward() visits each recorded node
/// exactly once in reverse order of creation, which is a reverse topological
/// order because an op's parents always precede it. Tapes are single-threaded
/// and cheap to create; training builds a fresh tape per step.
///
/// Every op validates that its output is finite and throws NumericError
/// otherwise: NaN/Inf is an error condition, never a silent state.
class GradientTape {
public:
    using Var = int;

    GradientTape() = default;
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    /// Leaf variable. Gradients are tracked only when requires_grad is set.
    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var parameter(Tensor value) { return leaf(std::move(value), true); }

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }

    /// Gradient of the last backward() target with respect to `v`.
    /// Zero tensor if no gradient flowed into v.
    Tensor grad(Var v) const;

    /// Reverse pass from a scalar (1-element) variable.
    void backward(Var scalar_loss);

    std::size_t size() const { return nodes_.size(); }

    // --- elementwise ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    /// s*x + c, elementwise with scalar coefficients.
    Var affine(Var x, double s, double c);
    Var scale(Var x, double s) { return affine(x, s, 0.0); }
    Var neg(Var x) { return affine(x, -1.0, 0.0); }
    Var log(Var x);
    Var sigmoid(Var x);
    Var gelu(Var x);
    Var clamp(Var x, double lo, double hi);
    Var smooth_l1(Var x);
    /// Adds a 1-D bias to every row of a 2-D tensor.
    Var add_rowvec(Var x, Var b);

    // --- structure ---
    Var reshape(Var x, std::vector<int> shape);
    Var transpose(Var x);  // 2-D
    Var concat(const std::vector<Var>& parts, int axis);
    Var slice(Var x, int axis, int start, int len);
    /// out[i] = x[indices[i]] over flat indices; backward scatter-adds.
    Var gather(Var x, std::vector<std::int64_t> indices, std::vector<int> out_shape);

    // --- reductions ---
    Var sum(Var x);
    Var mean(Var x);
    /// Reduce along `axis` (axis removed from the shape). Ties take the first
    /// maximum, so backward routing is deterministic.
    Var max_axis(Var x, int axis);

    // --- linear algebra / nn ---
    Var matmul(Var a, Var b);  // [m,k] x [k,n]
    Var softmax(Var x, int axis);
    Var instance_normalize(Var x);
    Var layer_normalize(Var x, Var gain, Var bias);
    /// x [H,W,Cin], w [kh,kw,Cin,Cout], b [Cout] -> [Ho,Wo,Cout].
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    /// Non-overlapping transposed conv: kernel size == stride.
    /// x [H,W,Cin], w [s,s,Cin,Cout], b [Cout] -> [H*s,W*s,Cout].
    Var conv2d_transpose(Var x, Var w, Var b, int stride);

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::function<void()> backward;  // accumulates into parent grads
    };

    Var record(Tensor value, bool requires_grad, std::function<void()> backward,
               const char* op_name);
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }
    void accumulate(Var v, const Tensor& g);
    Tensor& grad_ref(Var v);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;   // parallel to nodes_, allocated on demand
    std::vector<char> has_grad_;  // parallel to nodes_
};

}  // namespace scm
