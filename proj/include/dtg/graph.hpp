#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtg/tensor.hpp"

namespace dtg::ad {

// Misuse of the tape (backward with no recorded forward, foreign vars) is a
// programming error, distinct from bad data.
struct GraphError : std::logic_error {
    explicit GraphError(const std::string& msg) : std::logic_error(msg) {}
};

// A trainable tensor. grad has the same shape as value and accumulates
// across backward passes until zero_grad().
struct Param {
    Tensor value;
    Tensor grad;
    std::string name;

    Param() = default;
    Param(std::string n, Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape())), name(std::move(n)) {}

    void zero_grad() { grad.fill(0.0); }
    std::size_t numel() const { return value.numel(); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until Tape::clear().
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind : std::uint8_t {
    kLeaf,
    kConstant,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kAddScalar,
    kMulScalar,
    kAbs,
    kExp,
    kLog,
    kTanh,
    kArcsinh,
    kLogcosh,
    kSoftplus,
    kMatmul,
    kTMatVec,
    kRowScale,
    kSum,
    kConcat,
    kLayerNorm,
    kSelect,
    kReshape,
    kDetach,
};

// Reverse-mode tape over dense tensors. Values are computed eagerly as ops
// are recorded; backward() walks the nodes in reverse creation order, which
// is a valid topological order because parents always precede children.
// Single-threaded per instance.
class Tape {
  public:
    static constexpr double kLayerNormEps = 1e-5;

    Var leaf(Param& p);
    Var constant(Tensor t);
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var add_scalar(Var a, double s);
    Var mul_scalar(Var a, double s);
    Var abs(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var tanh(Var a);
    Var arcsinh(Var a);
    Var logcosh(Var a);
    Var softplus(Var a);
    // [R,C] x [C] -> [R], or [A,B] x [B,C] -> [A,C].
    Var matmul(Var a, Var b);
    // [R,C]^T x [R] -> [C].
    Var tmatvec(Var m, Var v);
    // [R,C] scaled row-wise by [R].
    Var row_scale(Var m, Var v);
    Var sum(Var a);
    Var concat(Var a, Var b);
    // (x - mean) / sqrt(var + eps); no learnable affine.
    Var layernorm(Var a);
    // mask ? a : b, elementwise.
    Var select(const std::vector<std::uint8_t>& mask, Var a, Var b);
    Var reshape(Var a, std::vector<std::size_t> shape);
    // Value pass-through; blocks all gradient flow into a's subgraph.
    Var detach(Var a);

    // y = W x + b with W [out,in], x [in], b [out].
    Var linear(Param& weight, Param& bias, Var x);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;

    // Seeds d(out) with output_grad (ones when omitted via the scalar
    // overload) and accumulates into every reachable Param::grad.
    void backward(Var out, const Tensor& output_grad);
    void backward(Var scalar_out);

    std::size_t size() const { return nodes_.size(); }
    void clear();

  private:
    struct Node {
        OpKind kind;
        int a = -1;
        int b = -1;
        Tensor value;
        Tensor grad;
        double scalar = 0.0;
        Param* param = nullptr;
        std::vector<std::uint8_t> mask;
        bool needs_grad = false;
        bool grad_live = false;
    };

    Var push(Node n);
    Node& node(Var v);
    const Node& node(Var v) const;
    void check_owned(Var v, const char* op) const;
    Tensor& ensure_grad(int id);
    void backprop_node(int id);

    // deque: appending never invalidates value()/grad() references
    std::deque<Node> nodes_;
};

// Convenience operators; both operands must live on the same tape.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);

// Worst relative error between analytic and central-difference gradients
// over every element of every param. fn must be deterministic and must
// rebuild its graph on the tape it is handed. Reports, never throws.
double grad_check(const std::function<Var(Tape&)>& fn, std::span<Param* const> params, double step = 1e-5);

}  // namespace dtg::ad
