#include "scm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "scm/ops.hpp"

namespace scm {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

// Splits a shape around `axis` into (outer, len, inner) strides for slice-wise loops.
struct AxisSplit {
    std::int64_t outer = 1;
    std::int64_t len = 1;
    std::int64_t inner = 1;
};

AxisSplit split_axis(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(shape.size()));
    }
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    s.len = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

}  // namespace

// --------------------------------------------------------------------------
// standalone forward kernels
// --------------------------------------------------------------------------

namespace ops {

Tensor softmax(const Tensor& x, int axis) {
    x.require_finite("softmax");
    const AxisSplit s = split_axis(x.shape(), axis);
    Tensor out(x.shape());
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
            const std::int64_t base = o * s.len * s.inner + i;
            double mx = x[base];
            for (std::int64_t l = 1; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
            double denom = 0.0;
            for (std::int64_t l = 0; l < s.len; ++l) {
                const double e = std::exp(x[base + l * s.inner] - mx);
                out[base + l * s.inner] = e;
                denom += e;
            }
            for (std::int64_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= denom;
        }
    }
    return out;
}

Tensor instance_normalize(const Tensor& x) {
    x.require_finite("instance_normalize");
    const std::int64_t n = x.numel();
    if (n == 1) return x;  // degenerate extent: identity
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    Tensor out(x.shape());
    for (std::int64_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv;
    return out;
}

Tensor layer_normalize(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    x.require_finite("layer_normalize");
    const int last = x.shape().back();
    if (gain.rank() != 1 || gain.dim(0) != last || bias.rank() != 1 || bias.dim(0) != last) {
        throw ShapeError("layer_normalize: gain/bias must be 1-D of extent " +
                         std::to_string(last));
    }
    const std::int64_t rows = x.numel() / last;
    Tensor out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t base = r * last;
        double mean = 0.0;
        for (int j = 0; j < last; ++j) mean += x[base + j];
        mean /= last;
        double var = 0.0;
        for (int j = 0; j < last; ++j) {
            const double d = x[base + j] - mean;
            var += d * d;
        }
        var /= last;
        const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
        for (int j = 0; j < last; ++j) {
            out[base + j] = gain[j] * ((x[base + j] - mean) * inv) + bias[j];
        }
    }
    return out;
}

double smooth_l1(double x) {
    const double a = std::abs(x);
    return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " x " +
                         b.shape_string());
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            const std::int64_t brow = static_cast<std::int64_t>(p) * n;
            const std::int64_t orow = static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) out[orow + j] += av * b[brow + j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + a.shape_string());
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    }
    return out;
}

}  // namespace ops

// --------------------------------------------------------------------------
// tape machinery
// --------------------------------------------------------------------------

GradientTape::Var GradientTape::record(Tensor value, bool requires_grad,
                                       std::function<void()> backward, const char* op_name) {
    value.require_finite(op_name);
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return static_cast<Var>(nodes_.size() - 1);
}

GradientTape::Var GradientTape::leaf(Tensor value, bool requires_grad) {
    return record(std::move(value), requires_grad, nullptr, "leaf");
}

Tensor& GradientTape::grad_ref(Var v) {
    const auto i = static_cast<std::size_t>(v);
    if (!has_grad_[i]) {
        grads_[i] = Tensor(nodes_[i].value.shape());
        has_grad_[i] = 1;
    }
    return grads_[i];
}

void GradientTape::accumulate(Var v, const Tensor& g) {
    if (!needs_grad(v)) return;
    Tensor& dst = grad_ref(v);
    const std::int64_t n = dst.numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

Tensor GradientTape::grad(Var v) const {
    const auto i = static_cast<std::size_t>(v);
    if (i < has_grad_.size() && has_grad_[i]) return grads_[i];
    return Tensor(nodes_[i].value.shape());
}

void GradientTape::backward(Var scalar_loss) {
    const Tensor& loss = value(scalar_loss);
    if (loss.numel() != 1) {
        throw ShapeError("backward: target must be scalar, shape is " + loss.shape_string());
    }
    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), 0);
    if (!needs_grad(scalar_loss)) return;
    grad_ref(scalar_loss)[0] = 1.0;
    for (Var v = scalar_loss; v >= 0; --v) {
        const auto i = static_cast<std::size_t>(v);
        if (!has_grad_[i]) continue;
        if (nodes_[i].backward) nodes_[i].backward();
    }
}

// --------------------------------------------------------------------------
// elementwise ops
// --------------------------------------------------------------------------

GradientTape::Var GradientTape::add(Var a, Var b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "add");
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    const bool rg = needs_grad(a) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "add");
    if (rg) {
        nodes_.back().backward = [this, self, a, b] {
            const Tensor& g = grad_ref(self);
            accumulate(a, g);
            accumulate(b, g);
        };
    }
    return self;
}

GradientTape::Var GradientTape::sub(Var a, Var b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "sub");
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
    const bool rg = needs_grad(a) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "sub");
    if (rg) {
        nodes_.back().backward = [this, self, a, b] {
            const Tensor& g = grad_ref(self);
            accumulate(a, g);
            if (needs_grad(b)) {
                Tensor neg(g.shape());
                for (std::int64_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
                accumulate(b, neg);
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::mul(Var a, Var b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "mul");
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    const bool rg = needs_grad(a) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "mul");
    if (rg) {
        nodes_.back().backward = [this, self, a, b] {
            const Tensor& g = grad_ref(self);
            if (needs_grad(a)) {
                const Tensor& vb2 = value(b);
                Tensor da(g.shape());
                for (std::int64_t i = 0; i < g.numel(); ++i) da[i] = g[i] * vb2[i];
                accumulate(a, da);
            }
            if (needs_grad(b)) {
                const Tensor& va2 = value(a);
                Tensor db(g.shape());
                for (std::int64_t i = 0; i < g.numel(); ++i) db[i] = g[i] * va2[i];
                accumulate(b, db);
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::div(Var a, Var b) {
    const Tensor &va = value(a), &vb = value(b);
    check_same_shape(va, vb, "div");
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] / vb[i];
    const bool rg = needs_grad(a) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "div");
    if (rg) {
        nodes_.back().backward = [this, self, a, b] {
            const Tensor& g = grad_ref(self);
            const Tensor& vb2 = value(b);
            if (needs_grad(a)) {
                Tensor da(g.shape());
                for (std::int64_t i = 0; i < g.numel(); ++i) da[i] = g[i] / vb2[i];
                accumulate(a, da);
            }
            if (needs_grad(b)) {
                const Tensor& va2 = value(a);
                Tensor db(g.shape());
                for (std::int64_t i = 0; i < g.numel(); ++i) {
                    db[i] = -g[i] * va2[i] / (vb2[i] * vb2[i]);
                }
                accumulate(b, db);
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::affine(Var x, double s, double c) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = s * vx[i] + c;
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "affine");
    if (rg) {
        nodes_.back().backward = [this, self, x, s] {
            const Tensor& g = grad_ref(self);
            Tensor dx(g.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] = s * g[i];
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::log(Var x) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(vx[i]);
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "log");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            const Tensor& g = grad_ref(self);
            const Tensor& vx2 = value(x);
            Tensor dx(g.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] = g[i] / vx2[i];
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::sigmoid(Var x) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-vx[i]));
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "sigmoid");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            const Tensor& g = grad_ref(self);
            const Tensor& y = value(self);
            Tensor dx(g.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] = g[i] * y[i] * (1.0 - y[i]);
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::gelu(Var x) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = 0.5 * vx[i] * (1.0 + std::erf(vx[i] * kInvSqrt2));
    }
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "gelu");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            const Tensor& g = grad_ref(self);
            const Tensor& vx2 = value(x);
            Tensor dx(g.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const double v = vx2[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] = g[i] * (cdf + v * pdf);
            }
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::clamp(Var x, double lo, double hi) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(vx[i], lo), hi);
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "clamp");
    if (rg) {
        nodes_.back().backward = [this, self, x, lo, hi] {
            const Tensor& g = grad_ref(self);
            const Tensor& vx2 = value(x);
            Tensor dx(g.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                dx[i] = (vx2[i] > lo && vx2[i] < hi) ? g[i] : 0.0;
            }
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::smooth_l1(Var x) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = ops::smooth_l1(vx[i]);
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "smooth_l1");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            const Tensor& g = grad_ref(self);
            const Tensor& vx2 = value(x);
            Tensor dx(g.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const double v = vx2[i];
                dx[i] = g[i] * (std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0));
            }
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::add_rowvec(Var x, Var b) {
    const Tensor &vx = value(x), &vb = value(b);
    if (vx.rank() != 2 || vb.rank() != 1 || vb.dim(0) != vx.dim(1)) {
        throw ShapeError("add_rowvec: expected x[m,n] and b[n]");
    }
    const int m = vx.dim(0), n = vx.dim(1);
    Tensor out(vx.shape());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out.at(i, j) = vx.at(i, j) + vb[j];
    }
    const bool rg = needs_grad(x) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "add_rowvec");
    if (rg) {
        nodes_.back().backward = [this, self, x, b, m, n] {
            const Tensor& g = grad_ref(self);
            accumulate(x, g);
            if (needs_grad(b)) {
                Tensor db({n});
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) db[j] += g.at(i, j);
                }
                accumulate(b, db);
            }
        };
    }
    return self;
}

// --------------------------------------------------------------------------
// structural ops
// --------------------------------------------------------------------------

GradientTape::Var GradientTape::reshape(Var x, std::vector<int> shape) {
    Tensor out = value(x).reshaped(std::move(shape));
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "reshape");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            accumulate(x, grad_ref(self).reshaped(value(x).shape()));
        };
    }
    return self;
}

GradientTape::Var GradientTape::transpose(Var x) {
    Tensor out = ops::transpose(value(x));
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "transpose");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            accumulate(x, ops::transpose(grad_ref(self)));
        };
    }
    return self;
}

GradientTape::Var GradientTape::concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const Tensor& first = value(parts[0]);
    std::vector<int> out_shape = first.shape();
    const AxisSplit s0 = split_axis(first.shape(), axis);
    std::int64_t total_len = 0;
    for (Var p : parts) {
        const Tensor& vp = value(p);
        if (vp.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < first.rank(); ++d) {
            if (d != axis && vp.dim(d) != first.dim(d)) {
                throw ShapeError("concat: extent mismatch on axis " + std::to_string(d));
            }
        }
        total_len += vp.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(total_len);

    Tensor out(out_shape);
    std::int64_t offset = 0;
    for (Var p : parts) {
        const Tensor& vp = value(p);
        const std::int64_t plen = vp.dim(axis);
        for (std::int64_t o = 0; o < s0.outer; ++o) {
            const std::int64_t src = o * plen * s0.inner;
            const std::int64_t dst = (o * total_len + offset) * s0.inner;
            std::copy_n(vp.data().begin() + src, plen * s0.inner, out.data().begin() + dst);
        }
        offset += plen;
    }

    bool rg = false;
    for (Var p : parts) rg = rg || needs_grad(p);
    Var self = record(std::move(out), rg, nullptr, "concat");
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_.back().backward = [this, self, ps, axis, s0, total_len] {
            const Tensor& g = grad_ref(self);
            std::int64_t off = 0;
            for (Var p : ps) {
                const Tensor& vp = value(p);
                const std::int64_t plen = vp.dim(axis);
                if (needs_grad(p)) {
                    Tensor dp(vp.shape());
                    for (std::int64_t o = 0; o < s0.outer; ++o) {
                        const std::int64_t src = (o * total_len + off) * s0.inner;
                        const std::int64_t dst = o * plen * s0.inner;
                        std::copy_n(g.data().begin() + src, plen * s0.inner,
                                    dp.data().begin() + dst);
                    }
                    accumulate(p, dp);
                }
                off += plen;
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::slice(Var x, int axis, int start, int len) {
    const Tensor& vx = value(x);
    const AxisSplit s = split_axis(vx.shape(), axis);
    if (start < 0 || len <= 0 || start + len > s.len) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for extent " +
                         std::to_string(s.len));
    }
    std::vector<int> out_shape = vx.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor out(out_shape);
    for (std::int64_t o = 0; o < s.outer; ++o) {
        const std::int64_t src = (o * s.len + start) * s.inner;
        const std::int64_t dst = o * len * s.inner;
        std::copy_n(vx.data().begin() + src, static_cast<std::int64_t>(len) * s.inner,
                    out.data().begin() + dst);
    }
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "slice");
    if (rg) {
        nodes_.back().backward = [this, self, x, axis, start, len, s] {
            const Tensor& g = grad_ref(self);
            Tensor& dst = grad_ref(x);
            for (std::int64_t o = 0; o < s.outer; ++o) {
                const std::int64_t src = o * len * s.inner;
                const std::int64_t d = (o * s.len + start) * s.inner;
                for (std::int64_t i = 0; i < len * s.inner; ++i) dst[d + i] += g[src + i];
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::gather(Var x, std::vector<std::int64_t> indices,
                                       std::vector<int> out_shape) {
    const Tensor& vx = value(x);
    if (Tensor::shape_numel(out_shape) != static_cast<std::int64_t>(indices.size())) {
        throw ShapeError("gather: index count does not match output shape");
    }
    Tensor out(out_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t idx = indices[i];
        if (idx < 0 || idx >= vx.numel()) throw ShapeError("gather: index out of range");
        out[static_cast<std::int64_t>(i)] = vx[idx];
    }
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "gather");
    if (rg) {
        auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(indices));
        nodes_.back().backward = [this, self, x, idx] {
            const Tensor& g = grad_ref(self);
            Tensor& dst = grad_ref(x);
            for (std::size_t i = 0; i < idx->size(); ++i) {
                dst[(*idx)[i]] += g[static_cast<std::int64_t>(i)];
            }
        };
    }
    return self;
}

// --------------------------------------------------------------------------
// reductions
// --------------------------------------------------------------------------

GradientTape::Var GradientTape::sum(Var x) {
    const Tensor& vx = value(x);
    double acc = 0.0;
    for (std::int64_t i = 0; i < vx.numel(); ++i) acc += vx[i];
    const bool rg = needs_grad(x);
    Var self = record(Tensor::scalar(acc), rg, nullptr, "sum");
    if (rg) {
        nodes_.back().backward = [this, self, x] {
            const double g = grad_ref(self)[0];
            Tensor dx = Tensor::full(value(x).shape(), g);
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::mean(Var x) {
    const Tensor& vx = value(x);
    return scale(sum(x), 1.0 / static_cast<double>(vx.numel()));
}

GradientTape::Var GradientTape::max_axis(Var x, int axis) {
    const Tensor& vx = value(x);
    const AxisSplit s = split_axis(vx.shape(), axis);
    std::vector<int> out_shape;
    for (int d = 0; d < vx.rank(); ++d) {
        if (d != axis) out_shape.push_back(vx.dim(d));
    }
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.numel());
    std::int64_t w = 0;
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
            const std::int64_t base = o * s.len * s.inner + i;
            double best = vx[base];
            std::int64_t best_at = base;
            for (std::int64_t l = 1; l < s.len; ++l) {
                const double v = vx[base + l * s.inner];
                if (v > best) {
                    best = v;
                    best_at = base + l * s.inner;
                }
            }
            out[w] = best;
            (*argmax)[static_cast<std::size_t>(w)] = best_at;
            ++w;
        }
    }
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "max_axis");
    if (rg) {
        nodes_.back().backward = [this, self, x, argmax] {
            const Tensor& g = grad_ref(self);
            Tensor& dst = grad_ref(x);
            for (std::size_t i = 0; i < argmax->size(); ++i) {
                dst[(*argmax)[i]] += g[static_cast<std::int64_t>(i)];
            }
        };
    }
    return self;
}

// --------------------------------------------------------------------------
// linear algebra / nn ops
// --------------------------------------------------------------------------

GradientTape::Var GradientTape::matmul(Var a, Var b) {
    Tensor out = ops::matmul(value(a), value(b));
    const bool rg = needs_grad(a) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "matmul");
    if (rg) {
        nodes_.back().backward = [this, self, a, b] {
            const Tensor& g = grad_ref(self);
            if (needs_grad(a)) accumulate(a, ops::matmul(g, ops::transpose(value(b))));
            if (needs_grad(b)) accumulate(b, ops::matmul(ops::transpose(value(a)), g));
        };
    }
    return self;
}

GradientTape::Var GradientTape::softmax(Var x, int axis) {
    Tensor out = ops::softmax(value(x), axis);
    const AxisSplit s = split_axis(out.shape(), axis);
    const bool rg = needs_grad(x);
    Var self = record(std::move(out), rg, nullptr, "softmax");
    if (rg) {
        nodes_.back().backward = [this, self, x, s] {
            const Tensor& g = grad_ref(self);
            const Tensor& y = value(self);
            Tensor dx(y.shape());
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t i = 0; i < s.inner; ++i) {
                    const std::int64_t base = o * s.len * s.inner + i;
                    double dot = 0.0;
                    for (std::int64_t l = 0; l < s.len; ++l) {
                        const std::int64_t k = base + l * s.inner;
                        dot += g[k] * y[k];
                    }
                    for (std::int64_t l = 0; l < s.len; ++l) {
                        const std::int64_t k = base + l * s.inner;
                        dx[k] = y[k] * (g[k] - dot);
                    }
                }
            }
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::instance_normalize(Var x) {
    const Tensor& vx = value(x);
    const std::int64_t n = vx.numel();
    Tensor out = ops::instance_normalize(vx);
    const bool rg = needs_grad(x);
    if (n == 1) {
        // identity on the degenerate extent
        Var self = record(std::move(out), rg, nullptr, "instance_normalize");
        if (rg) {
            nodes_.back().backward = [this, self, x] { accumulate(x, grad_ref(self)); };
        }
        return self;
    }
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += vx[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = vx[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_sigma = 1.0 / std::sqrt(var + ops::kNormEpsilon);

    Var self = record(std::move(out), rg, nullptr, "instance_normalize");
    if (rg) {
        nodes_.back().backward = [this, self, x, inv_sigma, n] {
            const Tensor& g = grad_ref(self);
            const Tensor& y = value(self);
            double gmean = 0.0, gydot = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                gmean += g[i];
                gydot += g[i] * y[i];
            }
            gmean /= static_cast<double>(n);
            gydot /= static_cast<double>(n);
            Tensor dx(y.shape());
            for (std::int64_t i = 0; i < n; ++i) {
                dx[i] = inv_sigma * (g[i] - gmean - y[i] * gydot);
            }
            accumulate(x, dx);
        };
    }
    return self;
}

GradientTape::Var GradientTape::layer_normalize(Var x, Var gain, Var bias) {
    const Tensor& vx = value(x);
    Tensor out = ops::layer_normalize(vx, value(gain), value(bias));
    const int last = vx.shape().back();
    const std::int64_t rows = vx.numel() / last;

    // cache per-row inverse sigma and normalized values for the backward pass
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    auto xhat = std::make_shared<std::vector<double>>(vx.data().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t base = r * last;
        double mean = 0.0;
        for (int j = 0; j < last; ++j) mean += vx[base + j];
        mean /= last;
        double var = 0.0;
        for (int j = 0; j < last; ++j) {
            const double d = vx[base + j] - mean;
            var += d * d;
        }
        var /= last;
        const double inv = 1.0 / std::sqrt(var + ops::kNormEpsilon);
        (*inv_sigma)[static_cast<std::size_t>(r)] = inv;
        for (int j = 0; j < last; ++j) {
            (*xhat)[static_cast<std::size_t>(base + j)] = (vx[base + j] - mean) * inv;
        }
    }

    const bool rg = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
    Var self = record(std::move(out), rg, nullptr, "layer_normalize");
    if (rg) {
        nodes_.back().backward = [this, self, x, gain, bias, inv_sigma, xhat, rows, last] {
            const Tensor& g = grad_ref(self);
            const Tensor& vgain = value(gain);
            if (needs_grad(gain)) {
                Tensor dgain({last});
                for (std::int64_t r = 0; r < rows; ++r) {
                    const std::int64_t base = r * last;
                    for (int j = 0; j < last; ++j) {
                        dgain[j] += g[base + j] * (*xhat)[static_cast<std::size_t>(base + j)];
                    }
                }
                accumulate(gain, dgain);
            }
            if (needs_grad(bias)) {
                Tensor dbias({last});
                for (std::int64_t r = 0; r < rows; ++r) {
                    const std::int64_t base = r * last;
                    for (int j = 0; j < last; ++j) dbias[j] += g[base + j];
                }
                accumulate(bias, dbias);
            }
            if (needs_grad(x)) {
                Tensor dx(value(x).shape());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const std::int64_t base = r * last;
                    double hmean = 0.0, hxdot = 0.0;
                    for (int j = 0; j < last; ++j) {
                        const double h = g[base + j] * vgain[j];
                        hmean += h;
                        hxdot += h * (*xhat)[static_cast<std::size_t>(base + j)];
                    }
                    hmean /= last;
                    hxdot /= last;
                    const double inv = (*inv_sigma)[static_cast<std::size_t>(r)];
                    for (int j = 0; j < last; ++j) {
                        const double h = g[base + j] * vgain[j];
                        dx[base + j] =
                            inv * (h - hmean -
                                   (*xhat)[static_cast<std::size_t>(base + j)] * hxdot);
                    }
                }
                accumulate(x, dx);
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor &vx = value(x), &vw = value(w), &vb = value(b);
    if (vx.rank() != 3 || vw.rank() != 4) {
        throw ShapeError("conv2d: expected x[H,W,Cin], w[kh,kw,Cin,Cout]");
    }
    const int H = vx.dim(0), W = vx.dim(1), Cin = vx.dim(2);
    const int kh = vw.dim(0), kw = vw.dim(1), Cout = vw.dim(3);
    if (vw.dim(2) != Cin) throw ShapeError("conv2d: input channel mismatch");
    if (vb.rank() != 1 || vb.dim(0) != Cout) throw ShapeError("conv2d: bias extent mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    Tensor out({Ho, Wo, Cout});
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            double* orow = &out.at(oy, ox, 0);
            for (int co = 0; co < Cout; ++co) orow[co] = vb[co];
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= W) continue;
                    const double* xrow = &vx.at(iy, ix, 0);
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double xv = xrow[ci];
                        if (xv == 0.0) continue;
                        const double* wrow =
                            &vw.data()[((static_cast<std::size_t>(ky) * kw + kx) * Cin + ci) *
                                       Cout];
                        for (int co = 0; co < Cout; ++co) orow[co] += xv * wrow[co];
                    }
                }
            }
        }
    }

    const bool rg = needs_grad(x) || needs_grad(w) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "conv2d");
    if (rg) {
        nodes_.back().backward = [this, self, x, w, b, stride, pad, H, W, Cin, kh, kw, Cout, Ho,
                                  Wo] {
            const Tensor& g = grad_ref(self);
            const Tensor& vx2 = value(x);
            const Tensor& vw2 = value(w);
            const bool gx = needs_grad(x), gw = needs_grad(w), gb = needs_grad(b);
            Tensor* dx = gx ? &grad_ref(x) : nullptr;
            Tensor* dw = gw ? &grad_ref(w) : nullptr;
            Tensor* db = gb ? &grad_ref(b) : nullptr;
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox) {
                    const double* grow = &g.at(oy, ox, 0);
                    if (gb) {
                        for (int co = 0; co < Cout; ++co) (*db)[co] += grow[co];
                    }
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            for (int ci = 0; ci < Cin; ++ci) {
                                const std::size_t wbase =
                                    ((static_cast<std::size_t>(ky) * kw + kx) * Cin + ci) * Cout;
                                double acc = 0.0;
                                const double xv = vx2.at(iy, ix, ci);
                                for (int co = 0; co < Cout; ++co) {
                                    const double gv = grow[co];
                                    if (gw) (*dw)[static_cast<std::int64_t>(wbase) + co] += gv * xv;
                                    acc += gv * vw2.data()[wbase + co];
                                }
                                if (gx) dx->at(iy, ix, ci) += acc;
                            }
                        }
                    }
                }
            }
        };
    }
    return self;
}

GradientTape::Var GradientTape::conv2d_transpose(Var x, Var w, Var b, int stride) {
    const Tensor &vx = value(x), &vw = value(w), &vb = value(b);
    if (vx.rank() != 3 || vw.rank() != 4) {
        throw ShapeError("conv2d_transpose: expected x[H,W,Cin], w[s,s,Cin,Cout]");
    }
    const int H = vx.dim(0), W = vx.dim(1), Cin = vx.dim(2);
    const int Cout = vw.dim(3);
    if (vw.dim(0) != stride || vw.dim(1) != stride || vw.dim(2) != Cin) {
        throw ShapeError("conv2d_transpose: kernel must be [stride,stride,Cin,Cout]");
    }
    if (vb.rank() != 1 || vb.dim(0) != Cout) {
        throw ShapeError("conv2d_transpose: bias extent mismatch");
    }

    Tensor out({H * stride, W * stride, Cout});
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            const double* xrow = &vx.at(iy, ix, 0);
            for (int dy = 0; dy < stride; ++dy) {
                for (int dx_ = 0; dx_ < stride; ++dx_) {
                    double* orow = &out.at(iy * stride + dy, ix * stride + dx_, 0);
                    for (int co = 0; co < Cout; ++co) orow[co] = vb[co];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double xv = xrow[ci];
                        if (xv == 0.0) continue;
                        const double* wrow =
                            &vw.data()[((static_cast<std::size_t>(dy) * stride + dx_) * Cin + ci) *
                                       Cout];
                        for (int co = 0; co < Cout; ++co) orow[co] += xv * wrow[co];
                    }
                }
            }
        }
    }

    const bool rg = needs_grad(x) || needs_grad(w) || needs_grad(b);
    Var self = record(std::move(out), rg, nullptr, "conv2d_transpose");
    if (rg) {
        nodes_.back().backward = [this, self, x, w, b, stride, H, W, Cin, Cout] {
            const Tensor& g = grad_ref(self);
            const Tensor& vx2 = value(x);
            const Tensor& vw2 = value(w);
            const bool gx = needs_grad(x), gw = needs_grad(w), gb = needs_grad(b);
            Tensor* dx = gx ? &grad_ref(x) : nullptr;
            Tensor* dw = gw ? &grad_ref(w) : nullptr;
            Tensor* db = gb ? &grad_ref(b) : nullptr;
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    for (int dy = 0; dy < stride; ++dy) {
                        for (int dxs = 0; dxs < stride; ++dxs) {
                            const double* grow = &g.at(iy * stride + dy, ix * stride + dxs, 0);
                            if (gb) {
                                for (int co = 0; co < Cout; ++co) (*db)[co] += grow[co];
                            }
                            for (int ci = 0; ci < Cin; ++ci) {
                                const std::size_t wbase =
                                    ((static_cast<std::size_t>(dy) * stride + dxs) * Cin + ci) *
                                    Cout;
                                const double xv = vx2.at(iy, ix, ci);
                                double acc = 0.0;
                                for (int co = 0; co < Cout; ++co) {
                                    const double gv = grow[co];
                                    if (gw) (*dw)[static_cast<std::int64_t>(wbase) + co] += gv * xv;
                                    acc += gv * vw2.data()[wbase + co];
                                }
                                if (gx) dx->at(iy, ix, ci) += acc;
                            }
                        }
                    }
                }
            }
        };
    }
    return self;
}

}  // namespace scm
