#include "dtg/graph.hpp"

#include <cmath>

namespace dtg::ad {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(cosh(x)) without overflow for large |x|.
double logcosh_stable(double x) {
    double a = std::fabs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - 0.6931471805599453094172321;
}

}  // namespace

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
    check_owned(v, "node");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    check_owned(v, "node");
    return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check_owned(Var v, const char* op) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw GraphError(std::string(op) + ": var does not belong to this tape");
    }
}

Var Tape::leaf(Param& p) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = p.value;
    n.param = &p;
    n.needs_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Tensor t) {
    Node n;
    n.kind = OpKind::kConstant;
    n.value = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
}

#define DTG_BINARY_ELEMWISE(name, kindval)                                                       \
    Var Tape::name(Var a, Var b) {                                                               \
        check_owned(a, #name);                                                                   \
        check_owned(b, #name);                                                                   \
        const Tensor& ta = nodes_[a.id].value;                                                   \
        const Tensor& tb = nodes_[b.id].value;                                                   \
        require(ta.same_shape(tb), #name ": shape mismatch " + Tensor::shape_str(ta.shape()) +   \
                                       " vs " + Tensor::shape_str(tb.shape()));                  \
        Node n;                                                                                  \
        n.kind = kindval;                                                                        \
        n.a = a.id;                                                                              \
        n.b = b.id;                                                                              \
        n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;                        \
        n.value = Tensor::zeros(ta.shape());

DTG_BINARY_ELEMWISE(add, OpKind::kAdd)
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] = ta[i] + tb[i];
    return push(std::move(n));
}

DTG_BINARY_ELEMWISE(sub, OpKind::kSub)
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] = ta[i] - tb[i];
    return push(std::move(n));
}

DTG_BINARY_ELEMWISE(mul, OpKind::kMul)
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] = ta[i] * tb[i];
    return push(std::move(n));
}

DTG_BINARY_ELEMWISE(div, OpKind::kDiv)
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] = ta[i] / tb[i];
    return push(std::move(n));
}

#undef DTG_BINARY_ELEMWISE

Var Tape::add_scalar(Var a, double s) {
    check_owned(a, "add_scalar");
    Node n;
    n.kind = OpKind::kAddScalar;
    n.a = a.id;
    n.scalar = s;
    n.needs_grad = nodes_[a.id].needs_grad;
    n.value = nodes_[a.id].value;
    for (auto& x : n.value.values()) x += s;
    return push(std::move(n));
}

Var Tape::mul_scalar(Var a, double s) {
    check_owned(a, "mul_scalar");
    Node n;
    n.kind = OpKind::kMulScalar;
    n.a = a.id;
    n.scalar = s;
    n.needs_grad = nodes_[a.id].needs_grad;
    n.value = nodes_[a.id].value;
    for (auto& x : n.value.values()) x *= s;
    return push(std::move(n));
}

#define DTG_UNARY(name, kindval, expr)                  \
    Var Tape::name(Var a) {                             \
        check_owned(a, #name);                          \
        Node n;                                         \
        n.kind = kindval;                               \
        n.a = a.id;                                     \
        n.needs_grad = nodes_[a.id].needs_grad;         \
        n.value = nodes_[a.id].value;                   \
        for (auto& x : n.value.values()) x = (expr);    \
        return push(std::move(n));                      \
    }

DTG_UNARY(abs, OpKind::kAbs, std::fabs(x))
DTG_UNARY(exp, OpKind::kExp, std::exp(x))
DTG_UNARY(log, OpKind::kLog, std::log(x))
DTG_UNARY(tanh, OpKind::kTanh, std::tanh(x))
DTG_UNARY(arcsinh, OpKind::kArcsinh, std::asinh(x))
DTG_UNARY(logcosh, OpKind::kLogcosh, logcosh_stable(x))
DTG_UNARY(softplus, OpKind::kSoftplus, x > 30.0 ? x : std::log1p(std::exp(x)))

#undef DTG_UNARY

Var Tape::matmul(Var a, Var b) {
    check_owned(a, "matmul");
    check_owned(b, "matmul");
    const Tensor& ta = nodes_[a.id].value;
    const Tensor& tb = nodes_[b.id].value;
    require(ta.rank() == 2, "matmul: lhs must be rank 2");
    Node n;
    n.kind = OpKind::kMatmul;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    std::size_t r = ta.shape()[0];
    std::size_t c = ta.shape()[1];
    if (tb.rank() == 1) {
        require(tb.shape()[0] == c, "matmul: inner dimensions disagree");
        n.value = Tensor::zeros({r});
        for (std::size_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += ta.at(i, j) * tb[j];
            n.value[i] = acc;
        }
    } else {
        require(tb.rank() == 2 && tb.shape()[0] == c, "matmul: inner dimensions disagree");
        std::size_t k = tb.shape()[1];
        n.value = Tensor::zeros({r, k});
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                double aij = ta.at(i, j);
                for (std::size_t l = 0; l < k; ++l) n.value.at(i, l) += aij * tb.at(j, l);
            }
        }
    }
    return push(std::move(n));
}

Var Tape::tmatvec(Var m, Var v) {
    check_owned(m, "tmatvec");
    check_owned(v, "tmatvec");
    const Tensor& tm = nodes_[m.id].value;
    const Tensor& tv = nodes_[v.id].value;
    require(tm.rank() == 2 && tv.rank() == 1 && tm.shape()[0] == tv.shape()[0],
            "tmatvec: need [R,C] and [R]");
    Node n;
    n.kind = OpKind::kTMatVec;
    n.a = m.id;
    n.b = v.id;
    n.needs_grad = nodes_[m.id].needs_grad || nodes_[v.id].needs_grad;
    std::size_t r = tm.shape()[0];
    std::size_t c = tm.shape()[1];
    n.value = Tensor::zeros({c});
    for (std::size_t i = 0; i < r; ++i) {
        double vi = tv[i];
        for (std::size_t j = 0; j < c; ++j) n.value[j] += tm.at(i, j) * vi;
    }
    return push(std::move(n));
}

Var Tape::row_scale(Var m, Var v) {
    check_owned(m, "row_scale");
    check_owned(v, "row_scale");
    const Tensor& tm = nodes_[m.id].value;
    const Tensor& tv = nodes_[v.id].value;
    require(tm.rank() == 2 && tv.rank() == 1 && tm.shape()[0] == tv.shape()[0],
            "row_scale: need [R,C] and [R]");
    Node n;
    n.kind = OpKind::kRowScale;
    n.a = m.id;
    n.b = v.id;
    n.needs_grad = nodes_[m.id].needs_grad || nodes_[v.id].needs_grad;
    n.value = tm;
    std::size_t c = tm.shape()[1];
    for (std::size_t i = 0; i < tm.shape()[0]; ++i) {
        for (std::size_t j = 0; j < c; ++j) n.value.at(i, j) *= tv[i];
    }
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    check_owned(a, "sum");
    Node n;
    n.kind = OpKind::kSum;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    double acc = 0.0;
    for (double x : nodes_[a.id].value.values()) acc += x;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

Var Tape::concat(Var a, Var b) {
    check_owned(a, "concat");
    check_owned(b, "concat");
    const Tensor& ta = nodes_[a.id].value;
    const Tensor& tb = nodes_[b.id].value;
    require(ta.rank() <= 1 && tb.rank() <= 1, "concat: vectors only");
    Node n;
    n.kind = OpKind::kConcat;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    std::vector<double> out;
    out.reserve(ta.numel() + tb.numel());
    out.insert(out.end(), ta.values().begin(), ta.values().end());
    out.insert(out.end(), tb.values().begin(), tb.values().end());
    n.value = Tensor::vector(std::move(out));
    return push(std::move(n));
}

Var Tape::layernorm(Var a) {
    check_owned(a, "layernorm");
    const Tensor& ta = nodes_[a.id].value;
    require(ta.numel() >= 1, "layernorm: empty input");
    Node n;
    n.kind = OpKind::kLayerNorm;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    std::size_t d = ta.numel();
    double mean = 0.0;
    for (double x : ta.values()) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double x : ta.values()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
    n.value = Tensor::zeros(ta.shape());
    for (std::size_t i = 0; i < d; ++i) n.value[i] = (ta[i] - mean) * inv_sigma;
    n.scalar = inv_sigma;  // saved for backward
    return push(std::move(n));
}

Var Tape::select(const std::vector<std::uint8_t>& mask, Var a, Var b) {
    check_owned(a, "select");
    check_owned(b, "select");
    const Tensor& ta = nodes_[a.id].value;
    const Tensor& tb = nodes_[b.id].value;
    require(ta.same_shape(tb) && mask.size() == ta.numel(), "select: shape mismatch");
    Node n;
    n.kind = OpKind::kSelect;
    n.a = a.id;
    n.b = b.id;
    n.mask = mask;
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    n.value = ta;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) n.value[i] = tb[i];
    }
    return push(std::move(n));
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
    check_owned(a, "reshape");
    const Tensor& ta = nodes_[a.id].value;
    require(Tensor::numel_of(shape) == ta.numel(), "reshape: element count mismatch");
    Node n;
    n.kind = OpKind::kReshape;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    n.value = Tensor(std::move(shape), ta.values());
    return push(std::move(n));
}

Var Tape::detach(Var a) {
    check_owned(a, "detach");
    Node n;
    n.kind = OpKind::kDetach;
    n.a = a.id;
    n.needs_grad = false;
    n.value = nodes_[a.id].value;
    return push(std::move(n));
}

Var Tape::linear(Param& weight, Param& bias, Var x) {
    Var w = leaf(weight);
    Var b = leaf(bias);
    return add(matmul(w, x), b);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_live) throw GraphError("grad: no backward pass has reached this var");
    return n.grad;
}

Tensor& Tape::ensure_grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::backward(Var out, const Tensor& output_grad) {
    check_owned(out, "backward");
    if (nodes_.empty()) throw GraphError("backward: no forward pass recorded");
    if (!output_grad.same_shape(nodes_[out.id].value)) {
        throw ShapeError("backward: output_grad shape mismatch");
    }
    // Reset grads from a previous backward on this tape.
    for (auto& n : nodes_) n.grad_live = false;
    ensure_grad(out.id) = output_grad;
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live || !n.needs_grad) continue;
        backprop_node(id);
    }
}

void Tape::backward(Var scalar_out) {
    check_owned(scalar_out, "backward");
    backward(scalar_out, Tensor::scalar(1.0));
}

void Tape::backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = n.grad;
    auto parent_needs = [&](int pid) { return pid >= 0 && nodes_[static_cast<std::size_t>(pid)].needs_grad; };

    switch (n.kind) {
        case OpKind::kLeaf: {
            Tensor& pg = n.param->grad;
            for (std::size_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
            break;
        }
        case OpKind::kConstant:
        case OpKind::kDetach:
            break;
        case OpKind::kAdd: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (parent_needs(n.b)) {
                Tensor& gb = ensure_grad(n.b);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
            }
            break;
        }
        case OpKind::kSub: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (parent_needs(n.b)) {
                Tensor& gb = ensure_grad(n.b);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
            break;
        }
        case OpKind::kMul: {
            const Tensor& va = nodes_[n.a].value;
            const Tensor& vb = nodes_[n.b].value;
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
            }
            if (parent_needs(n.b)) {
                Tensor& gb = ensure_grad(n.b);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
            }
            break;
        }
        case OpKind::kDiv: {
            const Tensor& va = nodes_[n.a].value;
            const Tensor& vb = nodes_[n.b].value;
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb[i];
            }
            if (parent_needs(n.b)) {
                Tensor& gb = ensure_grad(n.b);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
            }
            break;
        }
        case OpKind::kAddScalar: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            break;
        }
        case OpKind::kMulScalar: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.scalar;
            }
            break;
        }
        case OpKind::kAbs: {
            if (parent_needs(n.a)) {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double s = va[i] > 0.0 ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0);
                    ga[i] += g[i] * s;
                }
            }
            break;
        }
        case OpKind::kExp: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.value[i];
            }
            break;
        }
        case OpKind::kLog: {
            if (parent_needs(n.a)) {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / va[i];
            }
            break;
        }
        case OpKind::kTanh: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
            }
            break;
        }
        case OpKind::kArcsinh: {
            if (parent_needs(n.a)) {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / std::sqrt(1.0 + va[i] * va[i]);
            }
            break;
        }
        case OpKind::kLogcosh: {
            if (parent_needs(n.a)) {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * std::tanh(va[i]);
            }
            break;
        }
        case OpKind::kSoftplus: {
            if (parent_needs(n.a)) {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * sigmoid(va[i]);
            }
            break;
        }
        case OpKind::kMatmul: {
            const Tensor& va = nodes_[n.a].value;
            const Tensor& vb = nodes_[n.b].value;
            std::size_t r = va.shape()[0];
            std::size_t c = va.shape()[1];
            if (vb.rank() == 1) {
                if (parent_needs(n.a)) {
                    Tensor& ga = ensure_grad(n.a);
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g[i] * vb[j];
                    }
                }
                if (parent_needs(n.b)) {
                    Tensor& gb = ensure_grad(n.b);
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) gb[j] += va.at(i, j) * g[i];
                    }
                }
            } else {
                std::size_t k = vb.shape()[1];
                if (parent_needs(n.a)) {
                    Tensor& ga = ensure_grad(n.a);
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                            double acc = 0.0;
                            for (std::size_t l = 0; l < k; ++l) acc += g.at(i, l) * vb.at(j, l);
                            ga.at(i, j) += acc;
                        }
                    }
                }
                if (parent_needs(n.b)) {
                    Tensor& gb = ensure_grad(n.b);
                    for (std::size_t j = 0; j < c; ++j) {
                        for (std::size_t l = 0; l < k; ++l) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < r; ++i) acc += va.at(i, j) * g.at(i, l);
                            gb.at(j, l) += acc;
                        }
                    }
                }
            }
            break;
        }
        case OpKind::kTMatVec: {
            const Tensor& vm = nodes_[n.a].value;
            const Tensor& vv = nodes_[n.b].value;
            std::size_t r = vm.shape()[0];
            std::size_t c = vm.shape()[1];
            if (parent_needs(n.a)) {
                Tensor& gm = ensure_grad(n.a);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) gm.at(i, j) += vv[i] * g[j];
                }
            }
            if (parent_needs(n.b)) {
                Tensor& gv = ensure_grad(n.b);
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j) acc += vm.at(i, j) * g[j];
                    gv[i] += acc;
                }
            }
            break;
        }
        case OpKind::kRowScale: {
            const Tensor& vm = nodes_[n.a].value;
            const Tensor& vv = nodes_[n.b].value;
            std::size_t r = vm.shape()[0];
            std::size_t c = vm.shape()[1];
            if (parent_needs(n.a)) {
                Tensor& gm = ensure_grad(n.a);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) gm.at(i, j) += g.at(i, j) * vv[i];
                }
            }
            if (parent_needs(n.b)) {
                Tensor& gv = ensure_grad(n.b);
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j) acc += g.at(i, j) * vm.at(i, j);
                    gv[i] += acc;
                }
            }
            break;
        }
        case OpKind::kSum: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                double gs = g.item();
                for (auto& x : ga.values()) x += gs;
            }
            break;
        }
        case OpKind::kConcat: {
            std::size_t na = nodes_[n.a].value.numel();
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
            }
            if (parent_needs(n.b)) {
                Tensor& gb = ensure_grad(n.b);
                for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[na + i];
            }
            break;
        }
        case OpKind::kLayerNorm: {
            if (parent_needs(n.a)) {
                // dx = inv_sigma * (g - mean(g) - xhat * mean(g .* xhat))
                Tensor& ga = ensure_grad(n.a);
                std::size_t d = g.numel();
                double g_mean = 0.0;
                double gx_mean = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    g_mean += g[i];
                    gx_mean += g[i] * n.value[i];
                }
                g_mean /= static_cast<double>(d);
                gx_mean /= static_cast<double>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    ga[i] += n.scalar * (g[i] - g_mean - n.value[i] * gx_mean);
                }
            }
            break;
        }
        case OpKind::kSelect: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    if (n.mask[i]) ga[i] += g[i];
                }
            }
            if (parent_needs(n.b)) {
                Tensor& gb = ensure_grad(n.b);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    if (!n.mask[i]) gb[i] += g[i];
                }
            }
            break;
        }
        case OpKind::kReshape: {
            if (parent_needs(n.a)) {
                Tensor& ga = ensure_grad(n.a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            break;
        }
    }
}

void Tape::clear() { nodes_.clear(); }

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape->div(a, b); }
Var operator-(Var a) { return a.tape->mul_scalar(a, -1.0); }

double grad_check(const std::function<Var(Tape&)>& fn, std::span<Param* const> params, double step) {
    // Analytic pass.
    std::vector<Tensor> saved_grads;
    {
        for (Param* p : params) p->zero_grad();
        Tape tape;
        Var out = fn(tape);
        tape.backward(out);
        for (Param* p : params) saved_grads.push_back(p->grad);
    }

    auto eval = [&fn]() {
        Tape tape;
        Var out = fn(tape);
        return tape.value(out).item();
    };

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            double orig = p.value[i];
            p.value[i] = orig + step;
            double fp = eval();
            p.value[i] = orig - step;
            double fm = eval();
            p.value[i] = orig;
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = saved_grads[pi][i];
            double denom = std::max(std::fabs(analytic) + std::fabs(numeric), 1e-4);
            double rel = std::fabs(analytic - numeric) / denom;
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

}  // namespace dtg::ad
