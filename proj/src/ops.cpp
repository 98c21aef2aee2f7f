#include "dagr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace dagr {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw Error(std::string(op) + ": non-finite result");
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw Error(std::string(op) + ": undefined tensor operand");
}

/// Builds the output node and wires parents/backprop only when some input
/// tracks gradients; inference graphs carry no history and free eagerly.
struct OpBuilder {
    NodePtr out;
    bool track = false;

    OpBuilder(const char* op, Shape shape, std::vector<double> values,
              std::initializer_list<const Tensor*> inputs) {
        check_finite(values, op);
        out = std::make_shared<Node>();
        out->shape = std::move(shape);
        out->values = std::move(values);
        for (const Tensor* t : inputs) {
            require_defined(*t, op);
            if (t->requires_grad()) track = true;
        }
        if (track) {
            out->requires_grad = true;
            out->ensure_grad();
            for (const Tensor* t : inputs)
                if (t->requires_grad()) out->parents.push_back(t->node());
        }
    }

    Tensor done(std::function<void()> backprop) {
        if (track) out->backprop = std::move(backprop);
        return Tensor::wrap(out);
    }

    Tensor done() { return Tensor::wrap(out); }
};

bool wants_grad(const NodePtr& n) { return n->requires_grad; }
bool wants_grad(const Node* n) { return n->requires_grad; }

// ---- broadcasting -------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw Error(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not broadcast-compatible");
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Element strides of `from` viewed as `to` (0 where broadcast).
std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
    std::vector<std::size_t> strides(to.size(), 0);
    std::size_t stride = 1;
    const std::size_t offset = to.size() - from.size();
    for (std::size_t i = from.size(); i-- > 0;) {
        if (from[i] != 1) strides[offset + i] = stride;
        stride *= from[i];
    }
    return strides;
}

template <class Fwd, class Da, class Db>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
    require_defined(a, op);
    require_defined(b, op);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();

    if (sa == sb) {  // fast path, no index arithmetic
        const auto& av = a.data();
        const auto& bv = b.data();
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
        OpBuilder builder(op, sa, std::move(out), {&a, &b});
        if (!builder.track) return builder.done();
        Node* on = builder.out.get();
        NodePtr an = a.node(), bn = b.node();
        return builder.done([on, an, bn, da, db]() {
            const auto& g = on->grad;
            const auto& av = an->values;
            const auto& bv = bn->values;
            if (wants_grad(an))
                for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += da(av[i], bv[i], g[i]);
            if (wants_grad(bn))
                for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += db(av[i], bv[i], g[i]);
        });
    }

    Shape out_shape = broadcast_shape(sa, sb, op);
    const std::size_t n = shape_numel(out_shape);
    const auto stra = broadcast_strides(sa, out_shape);
    const auto strb = broadcast_strides(sb, out_shape);
    const Shape oshape = out_shape;
    const auto& av = a.data();
    const auto& bv = b.data();

    std::vector<double> out(n);
    {
        std::vector<std::size_t> idx(oshape.size(), 0);
        std::size_t ia = 0, ib = 0;
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = fwd(av[ia], bv[ib]);
            for (std::size_t d = oshape.size(); d-- > 0;) {
                ++idx[d];
                ia += stra[d];
                ib += strb[d];
                if (idx[d] < oshape[d]) break;
                idx[d] = 0;
                ia -= stra[d] * oshape[d];
                ib -= strb[d] * oshape[d];
            }
        }
    }
    OpBuilder builder(op, std::move(out_shape), std::move(out), {&a, &b});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr an = a.node(), bn = b.node();
    return builder.done([on, an, bn, stra, strb, oshape, da, db]() {
        const auto& g = on->grad;
        std::vector<std::size_t> idx(oshape.size(), 0);
        std::size_t ia = 0, ib = 0;
        const bool ga = wants_grad(an), gb = wants_grad(bn);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double avv = an->values[ia];
            const double bvv = bn->values[ib];
            if (ga) an->grad[ia] += da(avv, bvv, g[i]);
            if (gb) bn->grad[ib] += db(avv, bvv, g[i]);
            for (std::size_t d = oshape.size(); d-- > 0;) {
                ++idx[d];
                ia += stra[d];
                ib += strb[d];
                if (idx[d] < oshape[d]) break;
                idx[d] = 0;
                ia -= stra[d] * oshape[d];
                ib -= strb[d] * oshape[d];
            }
        }
    });
}

template <class Fwd, class Dx>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Dx dx) {
    require_defined(x, op);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    OpBuilder builder(op, x.shape(), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, dx]() {
        const auto& g = on->grad;
        for (std::size_t i = 0; i < g.size(); ++i)
            xn->grad[i] += dx(xn->values[i], on->values[i], g[i]);
    });
}

// Treat a tensor as [outer, extent(axis), inner].
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) throw Error(std::string(op) + ": axis out of range");
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace

// ---- arithmetic ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor neg(const Tensor& x) {
    return unary_op(
        "neg", x, [](double v) { return -v; },
        [](double, double, double g) { return -g; });
}

Tensor scale(const Tensor& x, double c) {
    return unary_op(
        "scale", x, [c](double v) { return c * v; },
        [c](double, double, double g) { return c * g; });
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary_op(
        "add_scalar", x, [c](double v) { return v + c; },
        [](double, double, double g) { return g; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        "sigmoid", x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double s, double g) { return g * s * (1.0 - s); });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double, double g) { return v > 0.0 ? g : 0.0; });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        "exp", x, [](double v) { return std::exp(v); },
        [](double, double e, double g) { return g * e; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        "log", x, [](double v) { return std::log(v); },
        [](double v, double, double g) { return g / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(
        "sqrt", x, [](double v) { return std::sqrt(v); },
        [](double, double r, double g) { return g / (2.0 * r); });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v, double, double g) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
}

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    double acc = 0.0;
    for (double v : x.data()) acc += v;  // fixed left-to-right order
    OpBuilder builder("sum", {}, {acc}, {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn]() {
        const double g = on->grad[0];
        for (double& gv : xn->grad) gv += g;
    });
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean");
    if (x.size() == 0) throw Error("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    require_defined(x, "sum_axis");
    const AxisView v = axis_view(x.shape(), axis, "sum_axis");
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(v.outer * v.inner, 0.0);
    const auto& xv = x.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.n; ++j) {
            const std::size_t base = (o * v.n + j) * v.inner;
            for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += xv[base + i];
        }
    OpBuilder builder("sum_axis", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, v]() {
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < v.n; ++j) {
                const std::size_t base = (o * v.n + j) * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i)
                    xn->grad[base + i] += on->grad[o * v.inner + i];
            }
    });
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2) throw Error("matmul: both operands must be 2-D");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k)
        throw Error("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double x = av[i * k + l];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[l * n + j];
        }
    OpBuilder builder("matmul", {m, n}, std::move(out), {&a, &b});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr an = a.node(), bn = b.node();
    return builder.done([on, an, bn, m, k, n]() {
        const auto& g = on->grad;
        if (wants_grad(an))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->values[l * n + j];
                    an->grad[i * k + l] += acc;
                }
        if (wants_grad(bn))
            for (std::size_t l = 0; l < k; ++l)
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i) acc += an->values[i * k + l] * g[i * n + j];
                    bn->grad[l * n + j] += acc;
                }
    });
}

Tensor transpose(const Tensor& x) {
    require_defined(x, "transpose");
    if (x.rank() != 2) throw Error("transpose: operand must be 2-D");
    const std::size_t m = x.extent(0), n = x.extent(1);
    const auto& xv = x.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
    OpBuilder builder("transpose", {n, m}, std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, m, n]() {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += on->grad[j * m + i];
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_defined(x, "linear");
    require_defined(w, "linear");
    if (w.rank() != 2) throw Error("linear: weight must be 2-D [in,out]");
    const bool vector_input = x.rank() == 1;
    if (!vector_input && x.rank() != 2) throw Error("linear: input must be 1-D or 2-D");
    Tensor x2 = vector_input ? reshape(x, {1, x.extent(0)}) : x;
    Tensor y = matmul(x2, w);
    if (b.defined()) {
        if (b.rank() != 1 || b.extent(0) != w.extent(1))
            throw Error("linear: bias shape mismatch");
        y = add(y, b);
    }
    return vector_input ? reshape(y, {w.extent(1)}) : y;
}

// ---- structure ----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw Error("concat: no operands");
    for (const Tensor& p : parts) require_defined(p, "concat");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw Error("concat: axis out of range");
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw Error("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != first[d])
                throw Error("concat: non-concat extents differ, " + shape_str(first) + " vs " +
                            shape_str(s));
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    const AxisView ov = axis_view(out_shape, axis, "concat");
    std::vector<double> out(shape_numel(out_shape));
    std::size_t row_offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t rows = p.extent(axis);
        const auto& pv = p.data();
        for (std::size_t o = 0; o < ov.outer; ++o) {
            const double* src = pv.data() + o * rows * ov.inner;
            double* dst = out.data() + (o * ov.n + row_offset) * ov.inner;
            std::copy(src, src + rows * ov.inner, dst);
        }
        row_offset += rows;
    }
    std::vector<const Tensor*> input_ptrs;
    input_ptrs.reserve(parts.size());
    bool track = false;
    for (const Tensor& p : parts) track = track || p.requires_grad();
    check_finite(out, "concat");
    auto node = std::make_shared<Node>();
    node->shape = std::move(out_shape);
    node->values = std::move(out);
    if (!track) return Tensor::wrap(node);
    node->requires_grad = true;
    node->ensure_grad();
    std::vector<NodePtr> part_nodes;
    std::vector<std::size_t> part_rows;
    for (const Tensor& p : parts) {
        part_nodes.push_back(p.node());
        part_rows.push_back(p.extent(axis));
        if (p.requires_grad()) node->parents.push_back(p.node());
    }
    Node* on = node.get();
    node->backprop = [on, part_nodes, part_rows, ov]() {
        std::size_t row_offset = 0;
        for (std::size_t pi = 0; pi < part_nodes.size(); ++pi) {
            const std::size_t rows = part_rows[pi];
            Node* pn = part_nodes[pi].get();
            if (wants_grad(pn))
                for (std::size_t o = 0; o < ov.outer; ++o) {
                    const double* src = on->grad.data() + (o * ov.n + row_offset) * ov.inner;
                    double* dst = pn->grad.data() + o * rows * ov.inner;
                    for (std::size_t i = 0; i < rows * ov.inner; ++i) dst[i] += src[i];
                }
            row_offset += rows;
        }
    };
    return Tensor::wrap(node);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t stop) {
    require_defined(x, "slice");
    const AxisView v = axis_view(x.shape(), axis, "slice");
    if (start > stop || stop > v.n) throw Error("slice: range out of bounds");
    const std::size_t rows = stop - start;
    Shape out_shape = x.shape();
    out_shape[axis] = rows;
    std::vector<double> out(v.outer * rows * v.inner);
    const auto& xv = x.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        const double* src = xv.data() + (o * v.n + start) * v.inner;
        std::copy(src, src + rows * v.inner, out.data() + o * rows * v.inner);
    }
    OpBuilder builder("slice", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, v, start, rows]() {
        for (std::size_t o = 0; o < v.outer; ++o) {
            const double* src = on->grad.data() + o * rows * v.inner;
            double* dst = xn->grad.data() + (o * v.n + start) * v.inner;
            for (std::size_t i = 0; i < rows * v.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require_defined(x, "reshape");
    if (shape_numel(shape) != x.size())
        throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    OpBuilder builder("reshape", std::move(shape), x.data(), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn]() {
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw Error("stack_rows: no operands");
    std::vector<Tensor> reshaped;
    reshaped.reserve(rows.size());
    for (const Tensor& r : rows) {
        if (r.rank() != 1) throw Error("stack_rows: operands must be 1-D");
        reshaped.push_back(reshape(r, {1, r.extent(0)}));
    }
    return concat(reshaped, 0);
}

Tensor stack_scalars(const std::vector<Tensor>& vals) {
    if (vals.empty()) throw Error("stack_scalars: no operands");
    std::vector<Tensor> reshaped;
    reshaped.reserve(vals.size());
    for (const Tensor& v : vals) {
        if (v.size() != 1) throw Error("stack_scalars: operands must be scalar");
        reshaped.push_back(reshape(v, {1}));
    }
    return concat(reshaped, 0);
}

// ---- normalization ------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
    require_defined(x, "softmax");
    const AxisView v = axis_view(x.shape(), axis, "softmax");
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double hi = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < v.n; ++j)
                hi = std::max(hi, xv[(o * v.n + j) * v.inner + i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) {
                const std::size_t idx = (o * v.n + j) * v.inner + i;
                out[idx] = std::exp(xv[idx] - hi);
                denom += out[idx];
            }
            for (std::size_t j = 0; j < v.n; ++j) out[(o * v.n + j) * v.inner + i] /= denom;
        }
    OpBuilder builder("softmax", x.shape(), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, v]() {
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = (o * v.n + j) * v.inner + i;
                    dot += on->grad[idx] * on->values[idx];
                }
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = (o * v.n + j) * v.inner + i;
                    xn->grad[idx] += on->values[idx] * (on->grad[idx] - dot);
                }
            }
    });
}

Tensor layernorm(const Tensor& x, std::size_t axis, double eps) {
    require_defined(x, "layernorm");
    if (eps < 0.0) throw Error("layernorm: eps must be >= 0");
    const AxisView v = axis_view(x.shape(), axis, "layernorm");
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    std::vector<double> inv_std(v.outer * v.inner);
    const double n = static_cast<double>(v.n);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double mu = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) mu += xv[(o * v.n + j) * v.inner + i];
            mu /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) {
                const double d = xv[(o * v.n + j) * v.inner + i] - mu;
                var += d * d;
            }
            var /= n;
            const double s = 1.0 / std::sqrt(var + eps);
            inv_std[o * v.inner + i] = s;
            for (std::size_t j = 0; j < v.n; ++j) {
                const std::size_t idx = (o * v.n + j) * v.inner + i;
                out[idx] = (xv[idx] - mu) * s;
            }
        }
    OpBuilder builder("layernorm", x.shape(), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, v, inv_std, n]() {
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double gm = 0.0, gym = 0.0;
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = (o * v.n + j) * v.inner + i;
                    gm += on->grad[idx];
                    gym += on->grad[idx] * on->values[idx];
                }
                gm /= n;
                gym /= n;
                const double s = inv_std[o * v.inner + i];
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = (o * v.n + j) * v.inner + i;
                    xn->grad[idx] += (on->grad[idx] - gm - on->values[idx] * gym) * s;
                }
            }
    });
}

// ---- convolutions -------------------------------------------------------

namespace {

// Valid output range for one spatial axis given a kernel offset.
inline void conv_axis_range(std::size_t in, std::size_t out, std::size_t stride, std::size_t pad,
                            std::size_t k, std::size_t& lo, std::size_t& hi_plus1) {
    // in-index = out*stride + k - pad must land in [0, in)
    lo = (pad > k) ? (pad - k + stride - 1) / stride : 0;
    const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 +
                               static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(k);
    if (top < 0) {
        lo = 0;
        hi_plus1 = 0;
        return;
    }
    hi_plus1 = std::min(out, static_cast<std::size_t>(top) / stride + 1);
    if (lo >= hi_plus1) {
        lo = 0;
        hi_plus1 = 0;
    }
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                            const char* op) {
    if (stride == 0) throw Error(std::string(op) + ": zero stride");
    if (k == 0) throw Error(std::string(op) + ": zero kernel extent");
    if (in + 2 * pad < k)
        throw Error(std::string(op) + ": kernel extent exceeds padded input");
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::array<std::size_t, 3> stride, std::array<std::size_t, 3> padding) {
    require_defined(input, "conv3d");
    require_defined(weight, "conv3d");
    require_defined(bias, "conv3d");
    if (input.rank() != 5) throw Error("conv3d: input must be [B,C,T,H,W], got " + shape_str(input.shape()));
    if (weight.rank() != 5) throw Error("conv3d: weight must be [O,C,kt,kh,kw]");
    const std::size_t B = input.extent(0), C = input.extent(1), T = input.extent(2),
                      H = input.extent(3), W = input.extent(4);
    const std::size_t O = weight.extent(0), kt = weight.extent(2), kh = weight.extent(3),
                      kw = weight.extent(4);
    if (weight.extent(1) != C)
        throw Error("conv3d: channel mismatch, input " + shape_str(input.shape()) + " weight " +
                    shape_str(weight.shape()));
    if (bias.rank() != 1 || bias.extent(0) != O) throw Error("conv3d: bias must be [O]");
    const std::size_t To = conv_out_extent(T, kt, stride[0], padding[0], "conv3d");
    const std::size_t Ho = conv_out_extent(H, kh, stride[1], padding[1], "conv3d");
    const std::size_t Wo = conv_out_extent(W, kw, stride[2], padding[2], "conv3d");

    const auto& in = input.data();
    const auto& w = weight.data();
    const auto& bs = bias.data();
    std::vector<double> out(B * O * To * Ho * Wo);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((b * O + o) * To * Ho * Wo),
                        To * Ho * Wo, bs[o]);

    const std::size_t in_hw = H * W, in_chw = T * in_hw;
    const std::size_t out_hw = Ho * Wo, out_chw = To * out_hw;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            double* out_c = out.data() + (b * O + o) * out_chw;
            for (std::size_t c = 0; c < C; ++c) {
                const double* in_c = in.data() + (b * C + c) * in_chw;
                const double* w_c = w.data() + ((o * C + c) * kt) * kh * kw;
                for (std::size_t zt = 0; zt < kt; ++zt)
                    for (std::size_t zh = 0; zh < kh; ++zh)
                        for (std::size_t zw = 0; zw < kw; ++zw) {
                            const double wv = w_c[(zt * kh + zh) * kw + zw];
                            std::size_t t0, t1, h0, h1, w0, w1;
                            conv_axis_range(T, To, stride[0], padding[0], zt, t0, t1);
                            conv_axis_range(H, Ho, stride[1], padding[1], zh, h0, h1);
                            conv_axis_range(W, Wo, stride[2], padding[2], zw, w0, w1);
                            for (std::size_t to = t0; to < t1; ++to) {
                                const std::size_t ti = to * stride[0] + zt - padding[0];
                                for (std::size_t ho = h0; ho < h1; ++ho) {
                                    const std::size_t hi = ho * stride[1] + zh - padding[1];
                                    const double* in_row = in_c + ti * in_hw + hi * W;
                                    double* out_row = out_c + to * out_hw + ho * Wo;
                                    for (std::size_t wo = w0; wo < w1; ++wo)
                                        out_row[wo] += wv * in_row[wo * stride[2] + zw - padding[2]];
                                }
                            }
                        }
            }
        }

    OpBuilder builder("conv3d", {B, O, To, Ho, Wo}, std::move(out), {&input, &weight, &bias});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.node();
    return builder.done([on, in_n, w_n, b_n, B, C, T, H, W, O, kt, kh, kw, To, Ho, Wo, stride,
                         padding]() {
        const auto& g = on->grad;
        const std::size_t in_hw = H * W, in_chw = T * in_hw;
        const std::size_t out_hw = Ho * Wo, out_chw = To * out_hw;
        if (wants_grad(b_n))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < O; ++o) {
                    const double* g_c = g.data() + (b * O + o) * out_chw;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < out_chw; ++i) acc += g_c[i];
                    b_n->grad[o] += acc;
                }
        const bool need_in = wants_grad(in_n), need_w = wants_grad(w_n);
        if (!need_in && !need_w) return;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
                const double* g_c = g.data() + (b * O + o) * out_chw;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* in_c = in_n->values.data() + (b * C + c) * in_chw;
                    double* gin_c = need_in ? in_n->grad.data() + (b * C + c) * in_chw : nullptr;
                    for (std::size_t zt = 0; zt < kt; ++zt)
                        for (std::size_t zh = 0; zh < kh; ++zh)
                            for (std::size_t zw = 0; zw < kw; ++zw) {
                                const std::size_t widx = ((o * C + c) * kt + zt) * kh * kw + zh * kw + zw;
                                const double wv = w_n->values[widx];
                                double wacc = 0.0;
                                std::size_t t0, t1, h0, h1, w0, w1;
                                conv_axis_range(T, To, stride[0], padding[0], zt, t0, t1);
                                conv_axis_range(H, Ho, stride[1], padding[1], zh, h0, h1);
                                conv_axis_range(W, Wo, stride[2], padding[2], zw, w0, w1);
                                for (std::size_t to = t0; to < t1; ++to) {
                                    const std::size_t ti = to * stride[0] + zt - padding[0];
                                    for (std::size_t ho = h0; ho < h1; ++ho) {
                                        const std::size_t hi = ho * stride[1] + zh - padding[1];
                                        const double* in_row = in_c + ti * in_hw + hi * W;
                                        double* gin_row = need_in ? gin_c + ti * in_hw + hi * W : nullptr;
                                        const double* g_row = g_c + to * out_hw + ho * Wo;
                                        for (std::size_t wo = w0; wo < w1; ++wo) {
                                            const std::size_t wi = wo * stride[2] + zw - padding[2];
                                            const double gv = g_row[wo];
                                            if (need_in) gin_row[wi] += gv * wv;
                                            wacc += gv * in_row[wi];
                                        }
                                    }
                                }
                                if (need_w) w_n->grad[widx] += wacc;
                            }
                }
            }
    });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::array<std::size_t, 2> stride, std::array<std::size_t, 2> padding) {
    require_defined(input, "conv2d");
    require_defined(weight, "conv2d");
    require_defined(bias, "conv2d");
    if (input.rank() != 4) throw Error("conv2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
    if (weight.rank() != 4) throw Error("conv2d: weight must be [O,C,kh,kw]");
    const std::size_t B = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
    const std::size_t O = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
    if (weight.extent(1) != C)
        throw Error("conv2d: channel mismatch, input " + shape_str(input.shape()) + " weight " +
                    shape_str(weight.shape()));
    if (bias.rank() != 1 || bias.extent(0) != O) throw Error("conv2d: bias must be [O]");
    const std::size_t Ho = conv_out_extent(H, kh, stride[0], padding[0], "conv2d");
    const std::size_t Wo = conv_out_extent(W, kw, stride[1], padding[1], "conv2d");

    const auto& in = input.data();
    const auto& w = weight.data();
    const auto& bs = bias.data();
    std::vector<double> out(B * O * Ho * Wo);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((b * O + o) * Ho * Wo), Ho * Wo,
                        bs[o]);

    const std::size_t in_hw = H * W, out_hw = Ho * Wo;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            double* out_c = out.data() + (b * O + o) * out_hw;
            for (std::size_t c = 0; c < C; ++c) {
                const double* in_c = in.data() + (b * C + c) * in_hw;
                const double* w_c = w.data() + (o * C + c) * kh * kw;
                for (std::size_t zh = 0; zh < kh; ++zh)
                    for (std::size_t zw = 0; zw < kw; ++zw) {
                        const double wv = w_c[zh * kw + zw];
                        std::size_t h0, h1, w0, w1;
                        conv_axis_range(H, Ho, stride[0], padding[0], zh, h0, h1);
                        conv_axis_range(W, Wo, stride[1], padding[1], zw, w0, w1);
                        for (std::size_t ho = h0; ho < h1; ++ho) {
                            const std::size_t hi = ho * stride[0] + zh - padding[0];
                            const double* in_row = in_c + hi * W;
                            double* out_row = out_c + ho * Wo;
                            for (std::size_t wo = w0; wo < w1; ++wo)
                                out_row[wo] += wv * in_row[wo * stride[1] + zw - padding[1]];
                        }
                    }
            }
        }

    OpBuilder builder("conv2d", {B, O, Ho, Wo}, std::move(out), {&input, &weight, &bias});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.node();
    return builder.done([on, in_n, w_n, b_n, B, C, H, W, O, kh, kw, Ho, Wo, stride, padding]() {
        const auto& g = on->grad;
        const std::size_t in_hw = H * W, out_hw = Ho * Wo;
        if (wants_grad(b_n))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < O; ++o) {
                    const double* g_c = g.data() + (b * O + o) * out_hw;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < out_hw; ++i) acc += g_c[i];
                    b_n->grad[o] += acc;
                }
        const bool need_in = wants_grad(in_n), need_w = wants_grad(w_n);
        if (!need_in && !need_w) return;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
                const double* g_c = g.data() + (b * O + o) * out_hw;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* in_c = in_n->values.data() + (b * C + c) * in_hw;
                    double* gin_c = need_in ? in_n->grad.data() + (b * C + c) * in_hw : nullptr;
                    for (std::size_t zh = 0; zh < kh; ++zh)
                        for (std::size_t zw = 0; zw < kw; ++zw) {
                            const std::size_t widx = (o * C + c) * kh * kw + zh * kw + zw;
                            const double wv = w_n->values[widx];
                            double wacc = 0.0;
                            std::size_t h0, h1, w0, w1;
                            conv_axis_range(H, Ho, stride[0], padding[0], zh, h0, h1);
                            conv_axis_range(W, Wo, stride[1], padding[1], zw, w0, w1);
                            for (std::size_t ho = h0; ho < h1; ++ho) {
                                const std::size_t hi = ho * stride[0] + zh - padding[0];
                                const double* in_row = in_c + hi * W;
                                double* gin_row = need_in ? gin_c + hi * W : nullptr;
                                const double* g_row = g_c + ho * Wo;
                                for (std::size_t wo = w0; wo < w1; ++wo) {
                                    const std::size_t wi = wo * stride[1] + zw - padding[1];
                                    const double gv = g_row[wo];
                                    if (need_in) gin_row[wi] += gv * wv;
                                    wacc += gv * in_row[wi];
                                }
                            }
                            if (need_w) w_n->grad[widx] += wacc;
                        }
                }
            }
    });
}

// ---- pooling ------------------------------------------------------------

namespace {

struct PoolGeometry {
    std::size_t outer = 1;
    std::vector<std::size_t> in_ext, out_ext, win, stride;
    std::vector<std::size_t> in_strides;  // within the trailing block
    std::size_t in_block = 1, out_block = 1;
};

PoolGeometry pool_geometry(const Shape& shape, const std::vector<std::size_t>& window,
                           const std::vector<std::size_t>& stride, const char* op) {
    const std::size_t k = window.size();
    if (k == 0 || k > shape.size()) throw Error(std::string(op) + ": bad window rank");
    if (stride.size() != k) throw Error(std::string(op) + ": window/stride rank mismatch");
    PoolGeometry geo;
    geo.win = window;
    geo.stride = stride;
    const std::size_t lead = shape.size() - k;
    for (std::size_t i = 0; i < lead; ++i) geo.outer *= shape[i];
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t in = shape[lead + i];
        if (window[i] == 0) throw Error(std::string(op) + ": empty window");
        if (stride[i] == 0) throw Error(std::string(op) + ": zero stride");
        if (window[i] > in)
            throw Error(std::string(op) + ": window exceeds extent " + std::to_string(in));
        geo.in_ext.push_back(in);
        geo.out_ext.push_back((in - window[i]) / stride[i] + 1);
    }
    geo.in_strides.assign(k, 1);
    for (std::size_t i = k; i-- > 1;) geo.in_strides[i - 1] = geo.in_strides[i] * geo.in_ext[i];
    for (std::size_t e : geo.in_ext) geo.in_block *= e;
    for (std::size_t e : geo.out_ext) geo.out_block *= e;
    return geo;
}

Shape pooled_shape(const Shape& shape, const PoolGeometry& geo) {
    Shape out = shape;
    const std::size_t lead = shape.size() - geo.win.size();
    for (std::size_t i = 0; i < geo.win.size(); ++i) out[lead + i] = geo.out_ext[i];
    return out;
}

// Invokes fn(out_index_within_block, window_base_offset) for every output cell,
// then scan(window_flat_offsets) via the odometer below.
template <class Cell>
void for_each_pool_cell(const PoolGeometry& geo, Cell cell) {
    const std::size_t k = geo.win.size();
    std::vector<std::size_t> oidx(k, 0);
    for (std::size_t oflat = 0; oflat < geo.out_block; ++oflat) {
        std::size_t base = 0;
        for (std::size_t i = 0; i < k; ++i) base += oidx[i] * geo.stride[i] * geo.in_strides[i];
        cell(oflat, base);
        for (std::size_t d = k; d-- > 0;) {
            if (++oidx[d] < geo.out_ext[d]) break;
            oidx[d] = 0;
        }
    }
}

template <class Visit>
void for_each_window_offset(const PoolGeometry& geo, Visit visit) {
    const std::size_t k = geo.win.size();
    std::vector<std::size_t> widx(k, 0);
    std::size_t count = 1;
    for (std::size_t w : geo.win) count *= w;
    for (std::size_t n = 0; n < count; ++n) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < k; ++i) off += widx[i] * geo.in_strides[i];
        visit(off);
        for (std::size_t d = k; d-- > 0;) {
            if (++widx[d] < geo.win[d]) break;
            widx[d] = 0;
        }
    }
}

}  // namespace

Tensor max_pool(const Tensor& x, const std::vector<std::size_t>& window,
                const std::vector<std::size_t>& stride) {
    require_defined(x, "max_pool");
    const PoolGeometry geo = pool_geometry(x.shape(), window, stride, "max_pool");
    Shape out_shape = pooled_shape(x.shape(), geo);
    const auto& xv = x.data();
    std::vector<double> out(geo.outer * geo.out_block);
    std::vector<std::size_t> argmax(out.size());
    std::vector<std::size_t> offsets;
    for_each_window_offset(geo, [&](std::size_t off) { offsets.push_back(off); });
    for (std::size_t o = 0; o < geo.outer; ++o) {
        const std::size_t in_base = o * geo.in_block;
        const std::size_t out_base = o * geo.out_block;
        for_each_pool_cell(geo, [&](std::size_t oflat, std::size_t cell_base) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t off : offsets) {
                const std::size_t idx = in_base + cell_base + off;
                if (xv[idx] > best) {  // first max wins on ties
                    best = xv[idx];
                    best_idx = idx;
                }
            }
            out[out_base + oflat] = best;
            argmax[out_base + oflat] = best_idx;
        });
    }
    OpBuilder builder("max_pool", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, argmax]() {
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[argmax[i]] += on->grad[i];
    });
}

Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& window,
                const std::vector<std::size_t>& stride) {
    require_defined(x, "avg_pool");
    const PoolGeometry geo = pool_geometry(x.shape(), window, stride, "avg_pool");
    Shape out_shape = pooled_shape(x.shape(), geo);
    const auto& xv = x.data();
    std::vector<std::size_t> offsets;
    for_each_window_offset(geo, [&](std::size_t off) { offsets.push_back(off); });
    const double inv = 1.0 / static_cast<double>(offsets.size());
    std::vector<double> out(geo.outer * geo.out_block);
    for (std::size_t o = 0; o < geo.outer; ++o) {
        const std::size_t in_base = o * geo.in_block;
        const std::size_t out_base = o * geo.out_block;
        for_each_pool_cell(geo, [&](std::size_t oflat, std::size_t cell_base) {
            double acc = 0.0;
            for (std::size_t off : offsets) acc += xv[in_base + cell_base + off];
            out[out_base + oflat] = acc * inv;
        });
    }
    OpBuilder builder("avg_pool", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, geo, offsets, inv]() {
        for (std::size_t o = 0; o < geo.outer; ++o) {
            const std::size_t in_base = o * geo.in_block;
            const std::size_t out_base = o * geo.out_block;
            for_each_pool_cell(geo, [&](std::size_t oflat, std::size_t cell_base) {
                const double gv = on->grad[out_base + oflat] * inv;
                for (std::size_t off : offsets) xn->grad[in_base + cell_base + off] += gv;
            });
        }
    });
}

Tensor global_avg_pool(const Tensor& x, std::size_t spatial_axes) {
    require_defined(x, "global_avg_pool");
    if (spatial_axes == 0 || spatial_axes > x.rank())
        throw Error("global_avg_pool: bad spatial axis count");
    const Shape& shape = x.shape();
    const std::size_t lead = shape.size() - spatial_axes;
    std::size_t outer = 1, block = 1;
    for (std::size_t i = 0; i < lead; ++i) outer *= shape[i];
    for (std::size_t i = lead; i < shape.size(); ++i) block *= shape[i];
    if (block == 0) throw Error("global_avg_pool: empty window");
    Shape out_shape = shape;
    for (std::size_t i = lead; i < shape.size(); ++i) out_shape[i] = 1;
    const auto& xv = x.data();
    std::vector<double> out(outer);
    const double inv = 1.0 / static_cast<double>(block);
    for (std::size_t o = 0; o < outer; ++o) {
        double acc = 0.0;
        const double* p = xv.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) acc += p[i];
        out[o] = acc * inv;
    }
    OpBuilder builder("global_avg_pool", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, outer, block, inv]() {
        for (std::size_t o = 0; o < outer; ++o) {
            const double gv = on->grad[o] * inv;
            double* p = xn->grad.data() + o * block;
            for (std::size_t i = 0; i < block; ++i) p[i] += gv;
        }
    });
}

Tensor adaptive_avg_pool(const Tensor& x, const std::vector<std::size_t>& targets) {
    require_defined(x, "adaptive_avg_pool");
    const std::size_t k = targets.size();
    if (k == 0 || k > x.rank()) throw Error("adaptive_avg_pool: bad target rank");
    const Shape& shape = x.shape();
    const std::size_t lead = shape.size() - k;
    std::size_t outer = 1;
    for (std::size_t i = 0; i < lead; ++i) outer *= shape[i];
    std::vector<std::size_t> in_ext(shape.begin() + static_cast<std::ptrdiff_t>(lead), shape.end());
    for (std::size_t i = 0; i < k; ++i) {
        if (targets[i] == 0) throw Error("adaptive_avg_pool: zero target extent");
        if (in_ext[i] == 0) throw Error("adaptive_avg_pool: empty input axis");
    }
    Shape out_shape = shape;
    for (std::size_t i = 0; i < k; ++i) out_shape[lead + i] = targets[i];
    // Per-axis buckets: [floor(j*in/out), ceil((j+1)*in/out))
    std::vector<std::vector<std::size_t>> lo(k), hi(k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < targets[i]; ++j) {
            lo[i].push_back(j * in_ext[i] / targets[i]);
            hi[i].push_back(((j + 1) * in_ext[i] + targets[i] - 1) / targets[i]);
        }
    std::vector<std::size_t> in_strides(k, 1);
    for (std::size_t i = k; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_ext[i];
    std::size_t in_block = 1, out_block = 1;
    for (std::size_t e : in_ext) in_block *= e;
    for (std::size_t e : targets) out_block *= e;

    // Flatten each output cell's bucket into an offset list shared by both passes.
    std::vector<std::vector<std::size_t>> cell_offsets(out_block);
    {
        std::vector<std::size_t> oidx(k, 0);
        for (std::size_t oflat = 0; oflat < out_block; ++oflat) {
            std::vector<std::size_t> cur(k);
            for (std::size_t i = 0; i < k; ++i) cur[i] = lo[i][oidx[i]];
            bool done = false;
            while (!done) {
                std::size_t off = 0;
                for (std::size_t i = 0; i < k; ++i) off += cur[i] * in_strides[i];
                cell_offsets[oflat].push_back(off);
                done = true;
                for (std::size_t d = k; d-- > 0;) {
                    if (++cur[d] < hi[d][oidx[d]]) {
                        done = false;
                        break;
                    }
                    cur[d] = lo[d][oidx[d]];
                }
            }
            for (std::size_t d = k; d-- > 0;) {
                if (++oidx[d] < targets[d]) break;
                oidx[d] = 0;
            }
        }
    }

    const auto& xv = x.data();
    std::vector<double> out(outer * out_block);
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t in_base = o * in_block, out_base = o * out_block;
        for (std::size_t oflat = 0; oflat < out_block; ++oflat) {
            double acc = 0.0;
            for (std::size_t off : cell_offsets[oflat]) acc += xv[in_base + off];
            out[out_base + oflat] = acc / static_cast<double>(cell_offsets[oflat].size());
        }
    }
    OpBuilder builder("adaptive_avg_pool", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, outer, in_block, out_block, cell_offsets]() {
        for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t in_base = o * in_block, out_base = o * out_block;
            for (std::size_t oflat = 0; oflat < out_block; ++oflat) {
                const double gv = on->grad[out_base + oflat] /
                                  static_cast<double>(cell_offsets[oflat].size());
                for (std::size_t off : cell_offsets[oflat]) xn->grad[in_base + off] += gv;
            }
        }
    });
}

// ---- interpolation ------------------------------------------------------

namespace {

struct InterpAxis {
    std::vector<std::size_t> i0, i1;
    std::vector<double> f;  // weight of i1
};

InterpAxis interp_axis(std::size_t in, std::size_t out) {
    InterpAxis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.f.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        std::size_t lo = std::min(static_cast<std::size_t>(src), in - 1);
        const std::size_t hi = std::min(lo + 1, in - 1);
        a.i0[i] = lo;
        a.i1[i] = hi;
        a.f[i] = hi == lo ? 0.0 : src - static_cast<double>(lo);
    }
    return a;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    require_defined(x, "resize_bilinear");
    if (x.rank() < 2) throw Error("resize_bilinear: input rank must be >= 2");
    if (out_h == 0 || out_w == 0) throw Error("resize_bilinear: zero target extent");
    const Shape& shape = x.shape();
    const std::size_t H = shape[shape.size() - 2], W = shape[shape.size() - 1];
    if (H == 0 || W == 0) throw Error("resize_bilinear: empty input");
    std::size_t outer = 1;
    for (std::size_t i = 0; i + 2 < shape.size(); ++i) outer *= shape[i];
    Shape out_shape = shape;
    out_shape[shape.size() - 2] = out_h;
    out_shape[shape.size() - 1] = out_w;
    const InterpAxis ay = interp_axis(H, out_h);
    const InterpAxis ax = interp_axis(W, out_w);
    const auto& xv = x.data();
    std::vector<double> out(outer * out_h * out_w);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = xv.data() + o * H * W;
        double* dst = out.data() + o * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const double fy = ay.f[i];
            const double* r0 = src + ay.i0[i] * W;
            const double* r1 = src + ay.i1[i] * W;
            for (std::size_t j = 0; j < out_w; ++j) {
                const double fx = ax.f[j];
                const double top = r0[ax.i0[j]] * (1.0 - fx) + r0[ax.i1[j]] * fx;
                const double bot = r1[ax.i0[j]] * (1.0 - fx) + r1[ax.i1[j]] * fx;
                dst[i * out_w + j] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    OpBuilder builder("resize_bilinear", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, outer, H, W, out_h, out_w, ay, ax]() {
        for (std::size_t o = 0; o < outer; ++o) {
            double* gsrc = xn->grad.data() + o * H * W;
            const double* gdst = on->grad.data() + o * out_h * out_w;
            for (std::size_t i = 0; i < out_h; ++i) {
                const double fy = ay.f[i];
                for (std::size_t j = 0; j < out_w; ++j) {
                    const double fx = ax.f[j];
                    const double g = gdst[i * out_w + j];
                    gsrc[ay.i0[i] * W + ax.i0[j]] += g * (1.0 - fy) * (1.0 - fx);
                    gsrc[ay.i0[i] * W + ax.i1[j]] += g * (1.0 - fy) * fx;
                    gsrc[ay.i1[i] * W + ax.i0[j]] += g * fy * (1.0 - fx);
                    gsrc[ay.i1[i] * W + ax.i1[j]] += g * fy * fx;
                }
            }
        }
    });
}

Tensor upsample_trilinear(const Tensor& x, std::size_t out_t, std::size_t out_h, std::size_t out_w) {
    require_defined(x, "upsample_trilinear");
    if (x.rank() < 3) throw Error("upsample_trilinear: input rank must be >= 3");
    if (out_t == 0 || out_h == 0 || out_w == 0) throw Error("upsample_trilinear: zero target extent");
    const Shape& shape = x.shape();
    const std::size_t T = shape[shape.size() - 3], H = shape[shape.size() - 2],
                      W = shape[shape.size() - 1];
    std::size_t outer = 1;
    for (std::size_t i = 0; i + 3 < shape.size(); ++i) outer *= shape[i];
    Shape out_shape = shape;
    out_shape[shape.size() - 3] = out_t;
    out_shape[shape.size() - 2] = out_h;
    out_shape[shape.size() - 1] = out_w;
    const InterpAxis at = interp_axis(T, out_t);
    const InterpAxis ay = interp_axis(H, out_h);
    const InterpAxis ax = interp_axis(W, out_w);
    const auto& xv = x.data();
    std::vector<double> out(outer * out_t * out_h * out_w);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = xv.data() + o * T * H * W;
        double* dst = out.data() + o * out_t * out_h * out_w;
        for (std::size_t t = 0; t < out_t; ++t) {
            const double ft = at.f[t];
            const double* p0 = src + at.i0[t] * H * W;
            const double* p1 = src + at.i1[t] * H * W;
            for (std::size_t i = 0; i < out_h; ++i) {
                const double fy = ay.f[i];
                for (std::size_t j = 0; j < out_w; ++j) {
                    const double fx = ax.f[j];
                    auto plane = [&](const double* p) {
                        const double top = p[ay.i0[i] * W + ax.i0[j]] * (1.0 - fx) +
                                           p[ay.i0[i] * W + ax.i1[j]] * fx;
                        const double bot = p[ay.i1[i] * W + ax.i0[j]] * (1.0 - fx) +
                                           p[ay.i1[i] * W + ax.i1[j]] * fx;
                        return top * (1.0 - fy) + bot * fy;
                    };
                    dst[(t * out_h + i) * out_w + j] = plane(p0) * (1.0 - ft) + plane(p1) * ft;
                }
            }
        }
    }
    OpBuilder builder("upsample_trilinear", std::move(out_shape), std::move(out), {&x});
    if (!builder.track) return builder.done();
    Node* on = builder.out.get();
    NodePtr xn = x.node();
    return builder.done([on, xn, outer, T, H, W, out_t, out_h, out_w, at, ay, ax]() {
        for (std::size_t o = 0; o < outer; ++o) {
            double* gsrc = xn->grad.data() + o * T * H * W;
            const double* gdst = on->grad.data() + o * out_t * out_h * out_w;
            for (std::size_t t = 0; t < out_t; ++t) {
                const double ft = at.f[t];
                for (std::size_t i = 0; i < out_h; ++i) {
                    const double fy = ay.f[i];
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const double fx = ax.f[j];
                        const double g = gdst[(t * out_h + i) * out_w + j];
                        for (int dt = 0; dt < 2; ++dt) {
                            const std::size_t ti = dt ? at.i1[t] : at.i0[t];
                            const double wt = dt ? ft : 1.0 - ft;
                            if (wt == 0.0 && dt) continue;
                            gsrc[(ti * H + ay.i0[i]) * W + ax.i0[j]] += g * wt * (1.0 - fy) * (1.0 - fx);
                            gsrc[(ti * H + ay.i0[i]) * W + ax.i1[j]] += g * wt * (1.0 - fy) * fx;
                            gsrc[(ti * H + ay.i1[i]) * W + ax.i0[j]] += g * wt * fy * (1.0 - fx);
                            gsrc[(ti * H + ay.i1[i]) * W + ax.i1[j]] += g * wt * fy * fx;
                        }
                    }
                }
            }
        }
    });
}

}  // namespace dagr
