#include "univ2d/autograd.hpp"

#include "univ2d/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>
#include <utility>

namespace univ2d::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Strides {
    std::size_t n, c, h, w;
};

int broadcast_dim(int a, int b, const Shape& sa, const Shape& sb) {
    if (a == b || b == 1) {
        return a;
    }
    if (a == 1) {
        return b;
    }
    throw ShapeError("cannot broadcast " + sa.str() + " with " + sb.str());
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    return {broadcast_dim(a.n, b.n, a, b), broadcast_dim(a.c, b.c, a, b),
            broadcast_dim(a.h, b.h, a, b), broadcast_dim(a.w, b.w, a, b)};
}

Strides strides_for(const Shape& in, const Shape& out) {
    const std::size_t sw = 1;
    const std::size_t sh = static_cast<std::size_t>(in.w);
    const std::size_t sc = sh * in.h;
    const std::size_t sn = sc * in.c;
    return {in.n == out.n ? sn : 0, in.c == out.c ? sc : 0, in.h == out.h ? sh : 0,
            in.w == out.w ? sw : 0};
}

template <class F>
void for_each_broadcast(const Shape& out, const Strides& sa, const Strides& sb, F&& f) {
    std::size_t o = 0;
    for (int n = 0; n < out.n; ++n) {
        for (int c = 0; c < out.c; ++c) {
            for (int h = 0; h < out.h; ++h) {
                const std::size_t ba = n * sa.n + c * sa.c + h * sa.h;
                const std::size_t bb = n * sb.n + c * sb.c + h * sb.h;
                for (int w = 0; w < out.w; ++w) {
                    f(o++, ba + w * sa.w, bb + w * sb.w);
                }
            }
        }
    }
}

enum class BinOp { add, sub, mul, div };

Var binary(const Var& a, const Var& b, BinOp op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const Shape so = broadcast_shape(sa, sb);
    Tensor out(so);
    const double* pa = a.value().ptr();
    const double* pb = b.value().ptr();
    double* po = out.ptr();
    const bool same = sa == sb;
    const Strides ta = strides_for(sa, so);
    const Strides tb = strides_for(sb, so);

    auto apply = [&](auto fn) {
        if (same) {
            for (std::size_t i = 0; i < out.numel(); ++i) {
                po[i] = fn(pa[i], pb[i]);
            }
        } else {
            for_each_broadcast(so, ta, tb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                po[o] = fn(pa[ia], pb[ib]);
            });
        }
    };
    switch (op) {
    case BinOp::add: apply([](double x, double y) { return x + y; }); break;
    case BinOp::sub: apply([](double x, double y) { return x - y; }); break;
    case BinOp::mul: apply([](double x, double y) { return x * y; }); break;
    case BinOp::div: apply([](double x, double y) { return x / y; }); break;
    }

    return make_result(std::move(out), {a, b}, [op, so, ta, tb, same](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const double* g = self.grad.ptr();
        const double* va = na.value.ptr();
        const double* vb = nb.value.ptr();
        double* ga = na.requires_grad ? na.ensure_grad().ptr() : nullptr;
        double* gb = nb.requires_grad ? nb.ensure_grad().ptr() : nullptr;
        auto visit = [&](auto fn) {
            if (same) {
                for (std::size_t i = 0; i < self.grad.numel(); ++i) {
                    fn(i, i, i);
                }
            } else {
                for_each_broadcast(so, ta, tb, fn);
            }
        };
        switch (op) {
        case BinOp::add:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
                if (ga) ga[ia] += g[o];
                if (gb) gb[ib] += g[o];
            });
            break;
        case BinOp::sub:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
                if (ga) ga[ia] += g[o];
                if (gb) gb[ib] -= g[o];
            });
            break;
        case BinOp::mul:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
                if (ga) ga[ia] += g[o] * vb[ib];
                if (gb) gb[ib] += g[o] * va[ia];
            });
            break;
        case BinOp::div:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
                const double inv = 1.0 / vb[ib];
                if (ga) ga[ia] += g[o] * inv;
                if (gb) gb[ib] -= g[o] * va[ia] * inv * inv;
            });
            break;
        }
    });
}

/// Unary op where the local derivative is a function of (input, output).
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
    Tensor out(a.shape());
    const double* pa = a.value().ptr();
    double* po = out.ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        po[i] = fwd(pa[i]);
    }
    return make_result(std::move(out), {a}, [deriv](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        double* gi = in.ensure_grad().ptr();
        const double* g = self.grad.ptr();
        const double* x = in.value.ptr();
        const double* y = self.value.ptr();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            gi[i] += g[i] * deriv(x[i], y[i]);
        }
    });
}

void im2col(const double* x, int channels, int h, int w, int k, int stride, int pad, int ho,
            int wo, double* col) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, int channels, int h, int w, int k, int stride, int pad, int ho,
            int wo, double* x) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < channels; ++c) {
        double* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row =
                    col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    double* dst = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

struct AxisTaps {
    std::vector<int> i0, i1;
    std::vector<double> w0, w1;
};

AxisTaps bilinear_taps(int in, int out) {
    AxisTaps t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w0.resize(out);
    t.w1.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) {
            src = 0.0;
        }
        int i0 = static_cast<int>(src);
        if (i0 > in - 1) {
            i0 = in - 1;
        }
        const int i1 = i0 < in - 1 ? i0 + 1 : i0;
        const double l1 = src - i0;
        t.i0[o] = i0;
        t.i1[o] = i1;
        t.w0[o] = 1.0 - l1;
        t.w1[o] = l1;
    }
    return t;
}

} // namespace

Tensor& Node::ensure_grad() {
    if (grad.empty() || grad.shape() != value.shape()) {
        grad = Tensor(value.shape(), 0.0);
    }
    return grad;
}

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return from_node(std::move(n));
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) {
        node_->grad.fill(0.0);
    }
}

Var Var::detached_copy() const { return leaf(node_->value, node_->requires_grad); }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
    if (any) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) {
            n->inputs.push_back(v.handle());
        }
        n->backward_fn = std::move(fn);
    }
    return Var::from_node(std::move(n));
}

void backward(const Var& root) {
    if (root.shape().numel() != 1) {
        throw ShapeError("backward requires a scalar root, got " + root.shape().str());
    }
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::div); }

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var one_minus(const Var& a) {
    return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            // Kept strictly inside (0,1) even where the exact value rounds to
            // 0 or 1 in double precision.
            static const double lo = std::numeric_limits<double>::min();
            static const double hi = std::nextafter(1.0, 0.0);
            double y;
            if (x >= 0.0) {
                y = 1.0 / (1.0 + std::exp(-x));
            } else {
                const double e = std::exp(x);
                y = e / (1.0 + e);
            }
            return std::clamp(y, lo, hi);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Var abs(const Var& a) {
    return unary(a, [](double x) { return std::abs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum_all(const Var& a) {
    Tensor out(Shape{1, 1, 1, 1}, a.value().sum());
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        const double g = self.grad[0];
        for (auto& v : in.ensure_grad().values()) {
            v += g;
        }
    });
}

Var mean_all(const Var& a) {
    const double count = static_cast<double>(a.value().numel());
    return scale(sum_all(a), 1.0 / count);
}

Var sum_spatial(const Var& a) {
    const Shape s = a.shape();
    Tensor out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane();
    const double* pa = a.value().ptr();
    for (std::size_t k = 0; k < out.numel(); ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            acc += pa[k * plane + i];
        }
        out[k] = acc;
    }
    return make_result(std::move(out), {a}, [plane](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        double* gi = in.ensure_grad().ptr();
        for (std::size_t k = 0; k < self.grad.numel(); ++k) {
            const double g = self.grad[k];
            for (std::size_t i = 0; i < plane; ++i) {
                gi[k * plane + i] += g;
            }
        }
    });
}

Var sum_per_sample(const Var& a) {
    const Shape s = a.shape();
    const std::size_t per = s.numel() / static_cast<std::size_t>(s.n);
    Tensor out(Shape{s.n, 1, 1, 1});
    const double* pa = a.value().ptr();
    for (int n = 0; n < s.n; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            acc += pa[n * per + i];
        }
        out[static_cast<std::size_t>(n)] = acc;
    }
    return make_result(std::move(out), {a}, [per](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        double* gi = in.ensure_grad().ptr();
        for (std::size_t n = 0; n < self.grad.numel(); ++n) {
            const double g = self.grad[n];
            for (std::size_t i = 0; i < per; ++i) {
                gi[n * per + i] += g;
            }
        }
    });
}

Var expand(const Var& a, Shape target) {
    const Shape s = a.shape();
    if (broadcast_shape(s, target) != target) {
        throw ShapeError("expand: " + s.str() + " does not broadcast to " + target.str());
    }
    return add(a, Var::constant(Tensor(target, 0.0)));
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    Shape s = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
            throw ShapeError("concat: " + s.str() + " vs " + ps.str());
        }
        total += ps.c;
    }
    Shape so{s.n, total, s.h, s.w};
    Tensor out(so);
    const std::size_t plane = so.plane();
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const int pc = p.shape().c;
        for (int n = 0; n < s.n; ++n) {
            const double* src = p.value().ptr() + static_cast<std::size_t>(n) * pc * plane;
            double* dst = out.ptr() + (static_cast<std::size_t>(n) * total + off) * plane;
            std::copy(src, src + pc * plane, dst);
        }
        off += pc;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_result(std::move(out), std::move(inputs), [offsets, total, plane](Node& self) {
        const int batch = self.value.shape().n;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            Node& in = *self.inputs[k];
            if (!in.requires_grad) {
                continue;
            }
            const int pc = in.value.shape().c;
            double* gi = in.ensure_grad().ptr();
            for (int n = 0; n < batch; ++n) {
                const double* src =
                    self.grad.ptr() + (static_cast<std::size_t>(n) * total + offsets[k]) * plane;
                double* dst = gi + static_cast<std::size_t>(n) * pc * plane;
                for (std::size_t i = 0; i < pc * plane; ++i) {
                    dst[i] += src[i];
                }
            }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Var parts[] = {a, b};
    return concat_channels(std::span<const Var>(parts));
}

Var slice_channels(const Var& a, int begin, int end) {
    const Shape s = a.shape();
    if (begin < 0 || end > s.c || begin >= end) {
        throw ShapeError("slice_channels [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + s.str());
    }
    const int oc = end - begin;
    Tensor out(Shape{s.n, oc, s.h, s.w});
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        const double* src = a.value().ptr() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
        std::copy(src, src + oc * plane, out.ptr() + static_cast<std::size_t>(n) * oc * plane);
    }
    return make_result(std::move(out), {a}, [begin, oc, plane](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        const int c = in.value.shape().c;
        double* gi = in.ensure_grad().ptr();
        for (int n = 0; n < self.value.shape().n; ++n) {
            const double* src = self.grad.ptr() + static_cast<std::size_t>(n) * oc * plane;
            double* dst = gi + (static_cast<std::size_t>(n) * c + begin) * plane;
            for (std::size_t i = 0; i < oc * plane; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w) {
        throw ShapeError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
    }
    const int k = ws.h;
    const int cout = ws.n;
    const int ho = (xs.h + 2 * pad - k) / stride + 1;
    const int wo = (xs.w + 2 * pad - k) / stride + 1;
    if (ho <= 0 || wo <= 0) {
        throw ShapeError("conv2d: empty output for input " + xs.str());
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape().numel() != static_cast<std::size_t>(cout)) {
        throw ShapeError("conv2d: bias " + bias.shape().str() + " for " + std::to_string(cout) +
                         " outputs");
    }
    const int rows = xs.c * k * k;
    const int plane = ho * wo;
    const bool direct = (k == 1 && stride == 1 && pad == 0);

    Tensor out(Shape{xs.n, cout, ho, wo});
    std::vector<double> col(direct ? 0 : static_cast<std::size_t>(rows) * plane);
    CMapR wmat(weight.value().ptr(), cout, rows);
    for (int n = 0; n < xs.n; ++n) {
        const double* xn = x.value().ptr() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w;
        const double* cptr = xn;
        if (!direct) {
            im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
            cptr = col.data();
        }
        MapR omat(out.ptr() + static_cast<std::size_t>(n) * cout * plane, cout, plane);
        omat.noalias() = wmat * CMapR(cptr, rows, plane);
        if (has_bias) {
            for (int co = 0; co < cout; ++co) {
                omat.row(co).array() += bias.value()[static_cast<std::size_t>(co)];
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_result(std::move(out), std::move(inputs),
                       [xs, k, cout, ho, wo, rows, plane, stride, pad, direct,
                        has_bias](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& nw = *self.inputs[1];
                           Node* nb = has_bias ? self.inputs[2].get() : nullptr;
                           const bool need_x = nx.requires_grad;
                           const bool need_w = nw.requires_grad;
                           const bool need_b = nb && nb->requires_grad;
                           CMapR wmat(nw.value.ptr(), cout, rows);
                           std::vector<double> col(direct ? 0
                                                          : static_cast<std::size_t>(rows) * plane);
                           std::vector<double> dcol(col.size());
                           const std::size_t xsz = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
                           for (int n = 0; n < xs.n; ++n) {
                               CMapR g(self.grad.ptr() + static_cast<std::size_t>(n) * cout * plane,
                                       cout, plane);
                               if (need_w) {
                                   const double* xn = nx.value.ptr() + n * xsz;
                                   const double* cptr = xn;
                                   if (!direct) {
                                       im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                                              col.data());
                                       cptr = col.data();
                                   }
                                   MapR gw(nw.ensure_grad().ptr(), cout, rows);
                                   gw.noalias() += g * CMapR(cptr, rows, plane).transpose();
                               }
                               if (need_b) {
                                   double* gb = nb->ensure_grad().ptr();
                                   // Plain sequential sum: Eigen's vectorized reduction
                                   // splits by pointer alignment, which makes the
                                   // rounding depend on where the buffer landed.
                                   for (int co = 0; co < cout; ++co) {
                                       const double* row = g.data() + static_cast<std::size_t>(co) * static_cast<std::size_t>(plane);
                                       double acc = 0.0;
                                       for (int i = 0; i < plane; ++i) {
                                           acc += row[i];
                                       }
                                       gb[co] += acc;
                                   }
                               }
                               if (need_x) {
                                   double* gx = nx.ensure_grad().ptr() + n * xsz;
                                   if (direct) {
                                       MapR(gx, rows, plane).noalias() += wmat.transpose() * g;
                                   } else {
                                       MapR(dcol.data(), rows, plane).noalias() =
                                           wmat.transpose() * g;
                                       col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                                              gx);
                                   }
                               }
                           }
                       });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
    const Shape s = x.shape();
    if (out_h <= 0 || out_w <= 0) {
        throw ShapeError("resize_bilinear: invalid target size");
    }
    if (out_h == s.h && out_w == s.w) {
        return x;
    }
    auto ty = std::make_shared<AxisTaps>(bilinear_taps(s.h, out_h));
    auto tx = std::make_shared<AxisTaps>(bilinear_taps(s.w, out_w));
    Tensor out(Shape{s.n, s.c, out_h, out_w});
    const std::size_t in_plane = s.plane();
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    const std::size_t maps = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t m = 0; m < maps; ++m) {
        const double* src = x.value().ptr() + m * in_plane;
        double* dst = out.ptr() + m * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
            const double* r0 = src + static_cast<std::size_t>(ty->i0[oy]) * s.w;
            const double* r1 = src + static_cast<std::size_t>(ty->i1[oy]) * s.w;
            const double wy0 = ty->w0[oy];
            const double wy1 = ty->w1[oy];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = tx->i0[ox];
                const int x1 = tx->i1[ox];
                dst[static_cast<std::size_t>(oy) * out_w + ox] =
                    wy0 * (tx->w0[ox] * r0[x0] + tx->w1[ox] * r0[x1]) +
                    wy1 * (tx->w0[ox] * r1[x0] + tx->w1[ox] * r1[x1]);
            }
        }
    }
    return make_result(std::move(out), {x}, [ty, tx, s, out_h, out_w, maps, in_plane,
                                             out_plane](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        double* gi = in.ensure_grad().ptr();
        for (std::size_t m = 0; m < maps; ++m) {
            const double* g = self.grad.ptr() + m * out_plane;
            double* dst = gi + m * in_plane;
            for (int oy = 0; oy < out_h; ++oy) {
                double* r0 = dst + static_cast<std::size_t>(ty->i0[oy]) * s.w;
                double* r1 = dst + static_cast<std::size_t>(ty->i1[oy]) * s.w;
                const double wy0 = ty->w0[oy];
                const double wy1 = ty->w1[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const double v = g[static_cast<std::size_t>(oy) * out_w + ox];
                    const int x0 = tx->i0[ox];
                    const int x1 = tx->i1[ox];
                    r0[x0] += wy0 * tx->w0[ox] * v;
                    r0[x1] += wy0 * tx->w1[ox] * v;
                    r1[x0] += wy1 * tx->w0[ox] * v;
                    r1[x1] += wy1 * tx->w1[ox] * v;
                }
            }
        }
    });
}

Var separable_filter_valid(const Var& x, std::span<const double> kernel) {
    const Shape s = x.shape();
    const int k = static_cast<int>(kernel.size());
    const int ho = s.h - k + 1;
    const int wo = s.w - k + 1;
    if (ho <= 0 || wo <= 0) {
        throw TooSmallError("filter of size " + std::to_string(k) + " exceeds input " + s.str());
    }
    auto ker = std::make_shared<std::vector<double>>(kernel.begin(), kernel.end());
    Tensor out(Shape{s.n, s.c, ho, wo});
    const std::size_t maps = static_cast<std::size_t>(s.n) * s.c;
    std::vector<double> tmp(static_cast<std::size_t>(s.h) * wo);
    for (std::size_t m = 0; m < maps; ++m) {
        const double* src = x.value().ptr() + m * s.plane();
        for (int y = 0; y < s.h; ++y) {
            for (int xo = 0; xo < wo; ++xo) {
                double acc = 0.0;
                for (int j = 0; j < k; ++j) {
                    acc += (*ker)[j] * src[static_cast<std::size_t>(y) * s.w + xo + j];
                }
                tmp[static_cast<std::size_t>(y) * wo + xo] = acc;
            }
        }
        double* dst = out.ptr() + m * static_cast<std::size_t>(ho) * wo;
        for (int yo = 0; yo < ho; ++yo) {
            for (int xo = 0; xo < wo; ++xo) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) {
                    acc += (*ker)[i] * tmp[static_cast<std::size_t>(yo + i) * wo + xo];
                }
                dst[static_cast<std::size_t>(yo) * wo + xo] = acc;
            }
        }
    }
    return make_result(std::move(out), {x}, [ker, s, k, ho, wo, maps](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        double* gi = in.ensure_grad().ptr();
        std::vector<double> dtmp(static_cast<std::size_t>(s.h) * wo);
        for (std::size_t m = 0; m < maps; ++m) {
            std::fill(dtmp.begin(), dtmp.end(), 0.0);
            const double* g = self.grad.ptr() + m * static_cast<std::size_t>(ho) * wo;
            for (int yo = 0; yo < ho; ++yo) {
                for (int xo = 0; xo < wo; ++xo) {
                    const double v = g[static_cast<std::size_t>(yo) * wo + xo];
                    for (int i = 0; i < k; ++i) {
                        dtmp[static_cast<std::size_t>(yo + i) * wo + xo] += (*ker)[i] * v;
                    }
                }
            }
            double* dst = gi + m * s.plane();
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < wo; ++xo) {
                    const double v = dtmp[static_cast<std::size_t>(y) * wo + xo];
                    for (int j = 0; j < k; ++j) {
                        dst[static_cast<std::size_t>(y) * s.w + xo + j] += (*ker)[j] * v;
                    }
                }
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers buffers,
               bool training, double momentum, double eps) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;
    auto mean = std::make_shared<std::vector<double>>(s.c);
    auto invstd = std::make_shared<std::vector<double>>(s.c);
    const double* px = x.value().ptr();

    if (training) {
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* p = px + (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    acc += p[i];
                }
            }
            const double mu = acc / static_cast<double>(count);
            double var = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* p = px + (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    var += d * d;
                }
            }
            const double biased = var / static_cast<double>(count);
            (*mean)[c] = mu;
            (*invstd)[c] = 1.0 / std::sqrt(biased + eps);
            if (buffers.running_mean && buffers.running_var) {
                const double unbiased =
                    count > 1 ? var / static_cast<double>(count - 1) : biased;
                auto& rm = (*buffers.running_mean)[static_cast<std::size_t>(c)];
                auto& rv = (*buffers.running_var)[static_cast<std::size_t>(c)];
                rm = (1.0 - momentum) * rm + momentum * mu;
                rv = (1.0 - momentum) * rv + momentum * unbiased;
            }
        }
    } else {
        if (!buffers.running_mean || !buffers.running_var) {
            throw Error("batch_norm: evaluation mode requires running statistics");
        }
        for (int c = 0; c < s.c; ++c) {
            (*mean)[c] = (*buffers.running_mean)[static_cast<std::size_t>(c)];
            (*invstd)[c] =
                1.0 / std::sqrt((*buffers.running_var)[static_cast<std::size_t>(c)] + eps);
        }
    }

    Tensor out(s);
    const double* g = gamma.value().ptr();
    const double* b = beta.value().ptr();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
            const double mu = (*mean)[c];
            const double is = (*invstd)[c];
            for (std::size_t i = 0; i < plane; ++i) {
                out[off + i] = g[c] * (px[off + i] - mu) * is + b[c];
            }
        }
    }

    return make_result(std::move(out), {x, gamma, beta}, [mean, invstd, s, plane, count,
                                                          training](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const double* gy = self.grad.ptr();
        const double* xv = nx.value.ptr();
        const double* gam = ng.value.ptr();
        for (int c = 0; c < s.c; ++c) {
            const double mu = (*mean)[c];
            const double is = (*invstd)[c];
            double sum_g = 0.0;
            double sum_gx = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xv[off + i] - mu) * is;
                    sum_g += gy[off + i];
                    sum_gx += gy[off + i] * xhat;
                }
            }
            if (ng.requires_grad) {
                ng.ensure_grad()[static_cast<std::size_t>(c)] += sum_gx;
            }
            if (nb.requires_grad) {
                nb.ensure_grad()[static_cast<std::size_t>(c)] += sum_g;
            }
            if (!nx.requires_grad) {
                continue;
            }
            double* gx = nx.ensure_grad().ptr();
            const double m = static_cast<double>(count);
            for (int n = 0; n < s.n; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    if (training) {
                        const double xhat = (xv[off + i] - mu) * is;
                        gx[off + i] +=
                            gam[c] * is * (gy[off + i] - sum_g / m - xhat * sum_gx / m);
                    } else {
                        gx[off + i] += gam[c] * is * gy[off + i];
                    }
                }
            }
        }
    });
}

} // namespace univ2d::ag
