#include "polysed/autodiff.h"

#include "polysed/errors.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace polysed {

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor& Gradients::at(const std::string& name) const {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
        throw Error("gradients: no parameter named '" + name + "'");
    }
    return it->second;
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    return push(Node{"constant", std::move(value), {}, {}, false, {}});
}

Var Tape::variable(Tensor value) {
    return push(Node{"variable", std::move(value), {}, {}, true, {}});
}

Var Tape::parameter(std::string name, Tensor value) {
    return push(Node{"parameter", std::move(value), {}, {}, true, std::move(name)});
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite value produced");
    }
    Node node{op, std::move(value), {}, {}, false, {}};
    node.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape_ != this) {
            throw Error(std::string(op) + ": operand recorded on a different tape");
        }
        node.inputs.push_back(v.id_);
        node.requires_grad = node.requires_grad || nodes_[v.id_].requires_grad;
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    return push(std::move(node));
}

Gradients Tape::backward(Var loss) {
    if (loss.tape_ != this) {
        throw Error("backward: loss belongs to a different tape");
    }
    const Tensor& loss_value = nodes_[loss.id_].value;
    if (loss_value.size() != 1) {
        throw ShapeError("backward: loss must be a single element, got shape " +
                         to_string(loss_value.shape()));
    }

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    grads[loss.id_] = Tensor(loss_value.shape(), 1.0);
    has[loss.id_] = 1;

    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!has[i] || !node.requires_grad || !node.backward) {
            continue;
        }
        GradContext ctx{node.value, grads[i], {}, {}};
        ctx.inputs.reserve(node.inputs.size());
        ctx.input_grads.reserve(node.inputs.size());
        for (const std::size_t in : node.inputs) {
            ctx.inputs.push_back(&nodes_[in].value);
            if (nodes_[in].requires_grad) {
                if (!has[in]) {
                    grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
                    has[in] = 1;
                }
                ctx.input_grads.push_back(&grads[in]);
            } else {
                ctx.input_grads.push_back(nullptr);
            }
        }
        node.backward(ctx);
        // Every consumer of node i has a larger id, so its adjoint is final.
        grads[i] = Tensor();
    }

    leaf_grads_.assign(nodes_.size(), Tensor());
    Gradients result;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& node = nodes_[i];
        if (!node.inputs.empty() || !node.requires_grad) {
            continue;
        }
        if (has[i]) {
            leaf_grads_[i] = std::move(grads[i]);
        } else {
            leaf_grads_[i] = Tensor(node.value.shape(), 0.0);
        }
        if (!node.name.empty()) {
            result.by_name[node.name] = leaf_grads_[i];
            if (!has[i]) {
                result.detached.push_back(node.name);
            }
        }
    }
    return result;
}

Tensor Tape::grad(Var leaf) const {
    if (leaf.id_ < leaf_grads_.size() && leaf_grads_[leaf.id_].shape() == nodes_[leaf.id_].value.shape()) {
        return leaf_grads_[leaf.id_];
    }
    return Tensor(nodes_[leaf.id_].value.shape(), 0.0);
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace ops {

namespace {

void same_tape(Var a, Var b, const char* op) {
    if (&a.tape() != &b.tape()) {
        throw Error(std::string(op) + ": operands on different tapes");
    }
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(s));
    }
}

Shape row_major_strides(const Shape& s) {
    Shape strides(s.size(), 1);
    for (std::size_t k = s.size(); k-- > 1;) {
        strides[k - 1] = strides[k] * s[k];
    }
    return strides;
}

// Splits a shape around `axis` into (outer, n, inner) for strided loops.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t k = 0; k < axis; ++k) {
        r.outer *= s[k];
    }
    r.n = s[axis];
    for (std::size_t k = axis + 1; k < s.size(); ++k) {
        r.inner *= s[k];
    }
    return r;
}

struct Broadcast {
    Shape out;
    Shape stride_a;
    Shape stride_b;
    bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    Broadcast p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    const Shape sa = row_major_strides(a);
    const Shape sb = row_major_strides(b);
    p.out.assign(r, 1);
    p.stride_a.assign(r, 0);
    p.stride_b.assign(r, 0);
    for (std::size_t k = 0; k < r; ++k) {
        const bool in_a = k >= r - a.size();
        const bool in_b = k >= r - b.size();
        const std::size_t da = in_a ? a[k - (r - a.size())] : 1;
        const std::size_t db = in_b ? b[k - (r - b.size())] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                             to_string(b));
        }
        p.out[k] = std::max(da, db);
        p.stride_a[k] = (in_a && da != 1) ? sa[k - (r - a.size())] : 0;
        p.stride_b[k] = (in_b && db != 1) ? sb[k - (r - b.size())] : 0;
    }
    return p;
}

template <class F>
void for_each_pair(const Broadcast& p, F&& f) {
    const std::size_t n = numel(p.out);
    if (p.same) {
        for (std::size_t o = 0; o < n; ++o) {
            f(o, o, o);
        }
        return;
    }
    const std::size_t r = p.out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t k = r; k-- > 0;) {
            if (++idx[k] < p.out[k]) {
                ia += p.stride_a[k];
                ib += p.stride_b[k];
                break;
            }
            ia -= p.stride_a[k] * (p.out[k] - 1);
            ib -= p.stride_b[k] * (p.out[k] - 1);
            idx[k] = 0;
        }
    }
}

// Elementwise binary op. fwd(a, b) -> value; da/db(a, b, out) -> partials.
template <class Fwd, class Da, class Db>
Var binary(const char* op, Var a, Var b, Fwd fwd, Da da, Db db) {
    same_tape(a, b, op);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Broadcast plan = plan_broadcast(av.shape(), bv.shape(), op);
    Tensor out(plan.out);
    for_each_pair(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = fwd(av[ia], bv[ib]);
    });
    return a.tape().record(op, std::move(out), {a, b}, [plan, da, db](GradContext& ctx) {
        const Tensor& x = *ctx.inputs[0];
        const Tensor& y = *ctx.inputs[1];
        Tensor* gx = ctx.input_grads[0];
        Tensor* gy = ctx.input_grads[1];
        for_each_pair(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            const double g = ctx.grad_out[o];
            if (gx) {
                (*gx)[ia] += g * da(x[ia], y[ib], ctx.out[o]);
            }
            if (gy) {
                (*gy)[ib] += g * db(x[ia], y[ib], ctx.out[o]);
            }
        });
    });
}

// Elementwise unary op. deriv(x, y) -> dy/dx.
template <class Fwd, class Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = fwd(av[i]);
    }
    return a.tape().record(op, std::move(out), {a}, [deriv](GradContext& ctx) {
        Tensor* gx = ctx.input_grads[0];
        const Tensor& x = *ctx.inputs[0];
        for (std::size_t i = 0; i < x.size(); ++i) {
            (*gx)[i] += ctx.grad_out[i] * deriv(x[i], ctx.out[i]);
        }
    });
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
    Shape out = s;
    if (keepdim) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Var scale(Var a, double factor) {
    return unary(
        "scale", a, [factor](double x) { return factor * x; },
        [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
    return unary(
        "add_scalar", a, [offset](double x) { return x + offset; },
        [](double, double) { return 1.0; });
}

Var square(Var a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var log(Var a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
    return unary(
        "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
    const Tensor& av = a.value();
    double total = 0.0;
    for (const double v : av.values()) {
        total += v;
    }
    return a.tape().record("sum", Tensor::scalar(total), {a}, [](GradContext& ctx) {
        const double g = ctx.grad_out[0];
        for (double& v : ctx.input_grads[0]->values()) {
            v += g;
        }
    });
}

Var sum(Var a, std::size_t axis, bool keepdim) {
    const Tensor& av = a.value();
    check_axis(av.shape(), axis, "sum");
    const AxisSplit sp = split_at(av.shape(), axis);
    Tensor out(reduced_shape(av.shape(), axis, keepdim));
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t k = 0; k < sp.n; ++k) {
            const double* src = av.data() + (o * sp.n + k) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
                dst[i] += src[i];
            }
        }
    }
    return a.tape().record("sum_axis", std::move(out), {a}, [sp](GradContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* g = ctx.grad_out.data() + o * sp.inner;
            for (std::size_t k = 0; k < sp.n; ++k) {
                double* dst = gx.data() + (o * sp.n + k) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    dst[i] += g[i];
                }
            }
        }
    });
}

Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var softmax(Var a, std::size_t axis) {
    const Tensor& av = a.value();
    check_axis(av.shape(), axis, "softmax");
    const AxisSplit sp = split_at(av.shape(), axis);
    Tensor out(av.shape());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double peak = av[base];
            for (std::size_t k = 1; k < sp.n; ++k) {
                peak = std::max(peak, av[base + k * sp.inner]);
            }
            double total = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double e = std::exp(av[base + k * sp.inner] - peak);
                out[base + k * sp.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < sp.n; ++k) {
                out[base + k * sp.inner] /= total;
            }
        }
    }
    return a.tape().record("softmax", std::move(out), {a}, [sp](GradContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        const Tensor& y = ctx.out;
        const Tensor& g = ctx.grad_out;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.n * sp.inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) {
                    dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                }
                for (std::size_t k = 0; k < sp.n; ++k) {
                    const std::size_t j = base + k * sp.inner;
                    gx[j] += y[j] * (g[j] - dot);
                }
            }
        }
    });
}

Var l2norm(Var a, std::size_t axis, bool keepdim) {
    const Tensor& av = a.value();
    check_axis(av.shape(), axis, "l2norm");
    const AxisSplit sp = split_at(av.shape(), axis);
    Tensor out(reduced_shape(av.shape(), axis, keepdim));
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double sq = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double v = av[(o * sp.n + k) * sp.inner + i];
                sq += v * v;
            }
            out[o * sp.inner + i] = std::sqrt(sq);
        }
    }
    return a.tape().record("l2norm", std::move(out), {a}, [sp](GradContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        const Tensor& x = *ctx.inputs[0];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const double norm = ctx.out[o * sp.inner + i];
                if (norm == 0.0) {
                    continue;
                }
                const double g = ctx.grad_out[o * sp.inner + i] / norm;
                for (std::size_t k = 0; k < sp.n; ++k) {
                    const std::size_t j = (o * sp.n + k) * sp.inner + i;
                    gx[j] += g * x[j];
                }
            }
        }
    });
}

namespace {

// c[b] += a[b] * w[b] for row-major (M,K) x (K,N) blocks.
void gemm_acc(const double* a, const double* w, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) {
                continue;
            }
            const double* wrow = w + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * wrow[j];
            }
        }
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool plain = av.rank() == 2 && bv.rank() == 2;
    const bool batched = av.rank() == 3 && bv.rank() == 3;
    if (!plain && !batched) {
        throw ShapeError("matmul: expected two rank-2 or two rank-3 operands, got " +
                         to_string(av.shape()) + " x " + to_string(bv.shape()));
    }
    const std::size_t off = batched ? 1 : 0;
    const std::size_t batch = batched ? av.dim(0) : 1;
    if (batched && bv.dim(0) != batch) {
        throw ShapeError("matmul: batch sizes differ: " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
    }
    const std::size_t m = av.dim(off);
    const std::size_t k = av.dim(off + 1);
    const std::size_t n = bv.dim(off + 1);
    if (bv.dim(off) != k) {
        throw ShapeError("matmul: inner dimensions differ: " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
    }
    Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
    Tensor out(out_shape);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        gemm_acc(av.data() + bi * m * k, bv.data() + bi * k * n, out.data() + bi * m * n, m, k, n);
    }
    return a.tape().record("matmul", std::move(out), {a, b}, [batch, m, k, n](GradContext& ctx) {
        const Tensor& x = *ctx.inputs[0];
        const Tensor& w = *ctx.inputs[1];
        const Tensor& g = ctx.grad_out;
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* xb = x.data() + bi * m * k;
            const double* wb = w.data() + bi * k * n;
            const double* gb = g.data() + bi * m * n;
            if (Tensor* gx = ctx.input_grads[0]) {
                // dX = dY * W^T
                double* dst = gx->data() + bi * m * k;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            acc += gb[i * n + j] * wb[p * n + j];
                        }
                        dst[i * k + p] += acc;
                    }
                }
            }
            if (Tensor* gw = ctx.input_grads[1]) {
                // dW = X^T * dY
                double* dst = gw->data() + bi * k * n;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double xv = xb[i * k + p];
                        if (xv == 0.0) {
                            continue;
                        }
                        for (std::size_t j = 0; j < n; ++j) {
                            dst[p * n + j] += xv * gb[i * n + j];
                        }
                    }
                }
            }
        }
    });
}

Var conv2d(Var input, Var kernels) {
    same_tape(input, kernels, "conv2d");
    const Tensor& x = input.value();
    const Tensor& w = kernels.value();
    if (x.rank() != 3 || w.rank() != 4) {
        throw ShapeError("conv2d: expected input (Cin,H,W) and kernels (Cout,Cin,KH,KW), got " +
                         to_string(x.shape()) + " and " + to_string(w.shape()));
    }
    const std::size_t cin = x.dim(0);
    const std::size_t h = x.dim(1);
    const std::size_t wd = x.dim(2);
    const std::size_t cout = w.dim(0);
    const std::size_t kh = w.dim(2);
    const std::size_t kw = w.dim(3);
    if (w.dim(1) != cin) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                         " input channels, input has " + std::to_string(cin));
    }
    if (kh > h || kw > wd) {
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than input " + std::to_string(h) + "x" + std::to_string(wd));
    }
    const std::size_t oh = h - kh + 1;
    const std::size_t ow = wd - kw + 1;
    Tensor out(Shape{cout, oh, ow});
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = w[((co * cin + ci) * kh + ky) * kw + kx];
                    for (std::size_t y = 0; y < oh; ++y) {
                        const double* src = x.data() + (ci * h + y + ky) * wd + kx;
                        double* dst = out.data() + (co * oh + y) * ow;
                        for (std::size_t xi = 0; xi < ow; ++xi) {
                            dst[xi] += wv * src[xi];
                        }
                    }
                }
            }
        }
    }
    return input.tape().record(
        "conv2d", std::move(out), {input, kernels},
        [cin, h, wd, cout, kh, kw, oh, ow](GradContext& ctx) {
            const Tensor& xv = *ctx.inputs[0];
            const Tensor& wv = *ctx.inputs[1];
            const Tensor& g = ctx.grad_out;
            Tensor* gx = ctx.input_grads[0];
            Tensor* gw = ctx.input_grads[1];
            for (std::size_t co = 0; co < cout; ++co) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                            const double wval = wv[widx];
                            double acc = 0.0;
                            for (std::size_t y = 0; y < oh; ++y) {
                                const double* grow = g.data() + (co * oh + y) * ow;
                                const std::size_t xoff = (ci * h + y + ky) * wd + kx;
                                if (gx) {
                                    double* dst = gx->data() + xoff;
                                    for (std::size_t xi = 0; xi < ow; ++xi) {
                                        dst[xi] += wval * grow[xi];
                                    }
                                }
                                if (gw) {
                                    const double* src = xv.data() + xoff;
                                    for (std::size_t xi = 0; xi < ow; ++xi) {
                                        acc += grow[xi] * src[xi];
                                    }
                                }
                            }
                            if (gw) {
                                (*gw)[widx] += acc;
                            }
                        }
                    }
                }
            }
        });
}

Var maxpool_last(Var a, std::size_t size) {
    const Tensor& av = a.value();
    if (av.rank() == 0 || size == 0) {
        throw ShapeError("maxpool: needs rank >= 1 and a positive pool size");
    }
    const std::size_t len = av.shape().back();
    if (len % size != 0) {
        throw ShapeError("maxpool: last axis " + std::to_string(len) +
                         " not divisible by pool size " + std::to_string(size));
    }
    Shape out_shape = av.shape();
    out_shape.back() = len / size;
    Tensor out(out_shape);
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t o = 0; o < out.size(); ++o) {
        const std::size_t base = o * size;
        std::size_t best = base;
        for (std::size_t k = 1; k < size; ++k) {
            if (av[base + k] > av[best]) {
                best = base + k;
            }
        }
        out[o] = av[best];
        argmax[o] = static_cast<std::uint32_t>(best);
    }
    return a.tape().record("maxpool", std::move(out), {a},
                           [argmax = std::move(argmax)](GradContext& ctx) {
                               Tensor& gx = *ctx.input_grads[0];
                               for (std::size_t o = 0; o < argmax.size(); ++o) {
                                   gx[argmax[o]] += ctx.grad_out[o];
                               }
                           });
}

Var pad(Var a, std::size_t axis, std::size_t before, std::size_t after, PadMode mode) {
    const Tensor& av = a.value();
    check_axis(av.shape(), axis, "pad");
    const AxisSplit sp = split_at(av.shape(), axis);
    if (mode == PadMode::edge && sp.n == 0) {
        throw ShapeError("pad: edge padding of an empty axis");
    }
    Shape out_shape = av.shape();
    out_shape[axis] += before + after;
    const std::size_t n_out = out_shape[axis];
    Tensor out(out_shape);
    // Source row along axis for each output row; -1 marks zero fill.
    std::vector<std::ptrdiff_t> source(n_out);
    for (std::size_t k = 0; k < n_out; ++k) {
        const auto s = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(before);
        const auto last = static_cast<std::ptrdiff_t>(sp.n) - 1;
        if (s >= 0 && s <= last) {
            source[k] = s;
        } else if (mode == PadMode::edge) {
            source[k] = std::clamp<std::ptrdiff_t>(s, 0, last);
        } else {
            source[k] = -1;
        }
    }
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t k = 0; k < n_out; ++k) {
            if (source[k] < 0) {
                continue;
            }
            const double* src = av.data() + (o * sp.n + static_cast<std::size_t>(source[k])) * sp.inner;
            std::copy(src, src + sp.inner, out.data() + (o * n_out + k) * sp.inner);
        }
    }
    return a.tape().record("pad", std::move(out), {a}, [sp, n_out, source](GradContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t k = 0; k < n_out; ++k) {
                if (source[k] < 0) {
                    continue;
                }
                const double* g = ctx.grad_out.data() + (o * n_out + k) * sp.inner;
                double* dst = gx.data() + (o * sp.n + static_cast<std::size_t>(source[k])) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    dst[i] += g[i];
                }
            }
        }
    });
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record("reshape", std::move(out), {a}, [](GradContext& ctx) {
        Tensor& gx = *ctx.input_grads[0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += ctx.grad_out[i];
        }
    });
}

Var permute(Var a, std::vector<std::size_t> order) {
    const Tensor& av = a.value();
    const std::size_t r = av.rank();
    std::vector<std::size_t> check = order;
    std::sort(check.begin(), check.end());
    std::vector<std::size_t> identity(r);
    std::iota(identity.begin(), identity.end(), 0);
    if (check != identity) {
        throw ShapeError("permute: order is not a permutation of the axes of " +
                         to_string(av.shape()));
    }
    const Shape in_strides = row_major_strides(av.shape());
    Shape out_shape(r);
    Shape gather(r);  // input stride for each output axis
    for (std::size_t k = 0; k < r; ++k) {
        out_shape[k] = av.dim(order[k]);
        gather[k] = in_strides[order[k]];
    }
    // Input offset of each output element, in output order.
    std::vector<std::size_t> index(av.size());
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t o = 0; o < index.size(); ++o) {
            index[o] = off;
            for (std::size_t k = r; k-- > 0;) {
                if (++idx[k] < out_shape[k]) {
                    off += gather[k];
                    break;
                }
                off -= gather[k] * (out_shape[k] - 1);
                idx[k] = 0;
            }
        }
    }
    Tensor out(out_shape);
    for (std::size_t o = 0; o < index.size(); ++o) {
        out[o] = av[index[o]];
    }
    return a.tape().record("permute", std::move(out), {a},
                           [index = std::move(index)](GradContext& ctx) {
                               Tensor& gx = *ctx.input_grads[0];
                               for (std::size_t o = 0; o < index.size(); ++o) {
                                   gx[index[o]] += ctx.grad_out[o];
                               }
                           });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no operands");
    }
    const Shape& first = parts[0].shape();
    check_axis(first, axis, "concat");
    std::vector<std::size_t> widths;
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Var& p : parts) {
        same_tape(parts[0], p, "concat");
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t k = 0; ok && k < s.size(); ++k) {
            ok = k == axis || s[k] == first[k];
        }
        if (!ok) {
            throw ShapeError("concat: shape " + to_string(s) + " incompatible with " +
                             to_string(first) + " along axis " + std::to_string(axis));
        }
        widths.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const AxisSplit sp = split_at(out_shape, axis);
    Tensor out(out_shape);
    std::size_t start = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = parts[p].value();
        const std::size_t block = widths[p] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy(v.data() + o * block, v.data() + (o + 1) * block,
                      out.data() + (o * sp.n + start) * sp.inner);
        }
        start += widths[p];
    }
    return parts[0].tape().record("concat", std::move(out), parts, [sp, widths](GradContext& ctx) {
        std::size_t begin = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
            const std::size_t block = widths[p] * sp.inner;
            if (Tensor* gx = ctx.input_grads[p]) {
                for (std::size_t o = 0; o < sp.outer; ++o) {
                    const double* g = ctx.grad_out.data() + (o * sp.n + begin) * sp.inner;
                    double* dst = gx->data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) {
                        dst[i] += g[i];
                    }
                }
            }
            begin += widths[p];
        }
    });
}

}  // namespace ops
}  // namespace polysed
