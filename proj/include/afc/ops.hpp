#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "afc/tape.hpp"
#include "afc/tensor.hpp"

namespace afc {
namespace detail {

inline std::vector<std::size_t> row_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw dimension_error("shapes not broadcastable: " + shape_str(a) + " vs " +
                                  shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

/// Strides of `s` viewed in a broadcast space of shape `out` (0 where s has
/// extent 1 or is missing the dimension).
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    const auto st = row_strides(s);
    std::vector<std::size_t> e(out.size(), 0);
    const std::size_t off = out.size() - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) e[off + i] = (s[i] == 1) ? 0 : st[i];
    return e;
}

/// Odometer walk over `out_shape`, calling f(offset_a, offset_b, linear_out).
template <typename F>
inline void for_broadcast(const Shape& out_shape, const std::vector<std::size_t>& ea,
                          const std::vector<std::size_t>& eb, F&& f) {
    const std::size_t n = shape_numel(out_shape);
    const std::size_t r = out_shape.size();
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(oa, ob, i);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += ea[d];
            ob += eb[d];
            if (idx[d] < out_shape[d]) break;
            oa -= ea[d] * out_shape[d];
            ob -= eb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

template <typename F>
inline Tensor bcast_binary(const Tensor& a, const Tensor& b, F&& f) {
    if (a.same_shape(b)) {  // fast path
        Tensor out(a.shape);
        for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
        return out;
    }
    const Shape os = broadcast_shape(a.shape, b.shape);
    Tensor out(os);
    const auto ea = broadcast_strides(a.shape, os);
    const auto eb = broadcast_strides(b.shape, os);
    for_broadcast(os, ea, eb, [&](std::size_t oa, std::size_t ob, std::size_t i) {
        out.data[i] = f(a.data[oa], b.data[ob]);
    });
    return out;
}

/// Sum `g` (broadcast-output shape) down into shape `target`.
inline Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape == target) return g;
    Tensor acc(target);
    const auto et = broadcast_strides(target, g.shape);
    const std::vector<std::size_t> zero(g.shape.size(), 0);
    for_broadcast(g.shape, et, zero, [&](std::size_t ot, std::size_t, std::size_t i) {
        acc.data[ot] += g.data[i];
    });
    return acc;
}

/// Test hook: when set, cmd_verify's harness-sanity fixture flips the sign of
/// one backward rule to prove the suites catch a broken gradient.
inline bool& matmul_backward_fault() {
    static bool fault = false;
    return fault;
}

}  // namespace detail

namespace ops {

// ---------------------------------------------------------------------------
// broadcasting elementwise binaries

inline Var add(Var a, Var b) {
    Tape& t = *same_tape(a, b);
    Tensor out = detail::bcast_binary(t.value(a), t.value(b), [](double x, double y) { return x + y; });
    return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        t.accumulate_grad(a, detail::reduce_to_shape(g, t.node(a).value.shape));
        t.accumulate_grad(b, detail::reduce_to_shape(g, t.node(b).value.shape));
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = *same_tape(a, b);
    Tensor out = detail::bcast_binary(t.value(a), t.value(b), [](double x, double y) { return x - y; });
    return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        t.accumulate_grad(a, detail::reduce_to_shape(g, t.node(a).value.shape));
        Tensor neg = g;
        for (double& v : neg.data) v = -v;
        t.accumulate_grad(b, detail::reduce_to_shape(neg, t.node(b).value.shape));
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = *same_tape(a, b);
    Tensor out = detail::bcast_binary(t.value(a), t.value(b), [](double x, double y) { return x * y; });
    return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& av = t.node(a).value;
        const Tensor& bv = t.node(b).value;
        if (t.node(a).requires_grad) {
            Tensor gb = detail::bcast_binary(g, bv, [](double x, double y) { return x * y; });
            t.accumulate_grad(a, detail::reduce_to_shape(gb, av.shape));
        }
        if (t.node(b).requires_grad) {
            Tensor ga = detail::bcast_binary(g, av, [](double x, double y) { return x * y; });
            t.accumulate_grad(b, detail::reduce_to_shape(ga, bv.shape));
        }
    });
}

inline Var div(Var a, Var b) {
    Tape& t = *same_tape(a, b);
    Tensor out = detail::bcast_binary(t.value(a), t.value(b), [](double x, double y) { return x / y; });
    return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& av = t.node(a).value;
        const Tensor& bv = t.node(b).value;
        if (t.node(a).requires_grad) {
            Tensor ga = detail::bcast_binary(g, bv, [](double x, double y) { return x / y; });
            t.accumulate_grad(a, detail::reduce_to_shape(ga, av.shape));
        }
        if (t.node(b).requires_grad) {
            const Tensor& ov = t.node(self).value;
            Tensor q = detail::bcast_binary(g, ov, [](double x, double y) { return x * y; });
            Tensor gb = detail::bcast_binary(q, bv, [](double x, double y) { return -x / y; });
            t.accumulate_grad(b, detail::reduce_to_shape(gb, bv.shape));
        }
    });
}

// ---------------------------------------------------------------------------
// scalar-parameter ops

inline Var scale(Var a, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v *= c;
    return t.record(std::move(out), {a.id}, [a = a.id, c](Tape& t, int self) {
        Tensor g = t.node(self).grad;
        for (double& v : g.data) v *= c;
        t.accumulate_grad(a, g);
    });
}

inline Var add_scalar(Var a, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v += c;
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        t.accumulate_grad(a, t.node(self).grad);
    });
}

inline Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// elementwise unaries

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(a).value;
        Tensor dx(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
        t.accumulate_grad(a, dx);
    });
}

inline double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Var softplus(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = softplus_scalar(v);
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(a).value;
        Tensor dx(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i)
            dx.data[i] = g.data[i] / (1.0 + std::exp(-x.data[i]));
        t.accumulate_grad(a, dx);
    });
}

inline Var log(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = std::log(v);
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(a).value;
        Tensor dx(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = g.data[i] / x.data[i];
        t.accumulate_grad(a, dx);
    });
}

inline Var exp(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = std::exp(v);
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        Tensor dx(y.shape);
        for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] = g.data[i] * y.data[i];
        t.accumulate_grad(a, dx);
    });
}

inline Var sqrt(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = std::sqrt(v);
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        Tensor dx(y.shape);
        for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] = g.data[i] / (2.0 * y.data[i]);
        t.accumulate_grad(a, dx);
    });
}

// ---------------------------------------------------------------------------
// shape ops

inline Var reshape(Var a, Shape s) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (shape_numel(s) != av.size())
        throw dimension_error("reshape " + shape_str(av.shape) + " -> " + shape_str(s) +
                              " changes element count");
    Tensor out(std::move(s), av.data);
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        Tensor g = t.node(self).grad;
        g.shape = t.node(a).value.shape;
        t.accumulate_grad(a, g);
    });
}

/// Collapse everything after the batch dimension: [B, ...] -> [B, prod(...)].
inline Var flatten(Var a) {
    const Tensor& av = a.tape->value(a);
    if (av.rank() < 1) throw dimension_error("flatten expects rank >= 1");
    return reshape(a, {av.shape[0], av.size() / av.shape[0]});
}

inline Var transpose2d(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 2) throw dimension_error("transpose2d expects rank 2");
    Tensor out({av.shape[1], av.shape[0]});
    for (std::size_t i = 0; i < av.shape[0]; ++i)
        for (std::size_t j = 0; j < av.shape[1]; ++j) out.at2(j, i) = av.at2(i, j);
    return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        Tensor dx({g.shape[1], g.shape[0]});
        for (std::size_t i = 0; i < g.shape[0]; ++i)
            for (std::size_t j = 0; j < g.shape[1]; ++j) dx.at2(j, i) = g.at2(i, j);
        t.accumulate_grad(a, dx);
    });
}

// ---------------------------------------------------------------------------
// reductions

inline Shape reduced_shape(const Shape& s, const std::vector<std::size_t>& axes, bool keepdims) {
    std::vector<bool> hit(s.size(), false);
    for (std::size_t ax : axes) {
        if (ax >= s.size()) throw dimension_error("reduction axis out of range");
        hit[ax] = true;
    }
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (hit[i]) {
            if (keepdims) out.push_back(1);
        } else {
            out.push_back(s[i]);
        }
    }
    if (out.empty()) out.push_back(1);
    return out;
}

inline Var reduce_sum(Var a, std::vector<std::size_t> axes, bool keepdims) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    Shape kshape(av.shape);  // keepdims form used for index mapping
    for (std::size_t ax : axes) {
        if (ax >= kshape.size()) throw dimension_error("reduction axis out of range");
        kshape[ax] = 1;
    }
    Tensor acc(kshape);
    {
        const auto et = detail::broadcast_strides(kshape, av.shape);
        const std::vector<std::size_t> zero(av.shape.size(), 0);
        detail::for_broadcast(av.shape, et, zero, [&](std::size_t ot, std::size_t, std::size_t i) {
            acc.data[ot] += av.data[i];
        });
    }
    Tensor out(reduced_shape(av.shape, axes, keepdims), std::move(acc.data));
    return t.record(std::move(out), {a.id}, [a = a.id, kshape](Tape& t, int self) {
        Tensor g = t.node(self).grad;
        g.shape = kshape;
        const Shape& xs = t.node(a).value.shape;
        Tensor dx(xs);
        const auto eg = detail::broadcast_strides(kshape, xs);
        const std::vector<std::size_t> zero(xs.size(), 0);
        detail::for_broadcast(xs, eg, zero, [&](std::size_t og, std::size_t, std::size_t i) {
            dx.data[i] = g.data[og];
        });
        t.accumulate_grad(a, dx);
    });
}

inline Var reduce_mean(Var a, std::vector<std::size_t> axes, bool keepdims) {
    const Tensor& av = a.tape->value(a);
    std::size_t count = 1;
    for (std::size_t ax : axes) count *= av.shape.at(ax);
    return scale(reduce_sum(a, std::move(axes), keepdims), 1.0 / static_cast<double>(count));
}

/// Total sum; result has shape [1].
inline Var sum(Var a) {
    const Tensor& av = a.tape->value(a);
    std::vector<std::size_t> axes(av.rank());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    return reduce_sum(a, std::move(axes), false);
}

// ---------------------------------------------------------------------------
// softmax over the last axis

inline Var softmax(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() < 1) throw dimension_error("softmax expects rank >= 1");
    const std::size_t cols = av.shape.back();
    const std::size_t rows = av.size() / cols;
    Tensor out(av.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data.data() + r * cols;
        double* y = out.data.data() + r * cols;
        double mx = x[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
    }
    return t.record(std::move(out), {a.id}, [a = a.id, rows, cols](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        Tensor dx(y.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data.data() + r * cols;
            const double* yr = y.data.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
            double* dr = dx.data.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) dr[c] = yr[c] * (gr[c] - dot);
        }
        t.accumulate_grad(a, dx);
    });
}

// ---------------------------------------------------------------------------
// matmul

inline Var matmul(Var a, Var b) {
    Tape& t = *same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
        throw dimension_error("matmul shape mismatch: " + shape_str(av.shape) + " x " +
                              shape_str(bv.shape));
    const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av.data[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data.data() + p * n;
            double* orow = out.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, m, k, n](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& av = t.node(a).value;
        const Tensor& bv = t.node(b).value;
        const double flip = detail::matmul_backward_fault() ? -1.0 : 1.0;
        if (t.node(a).requires_grad) {
            Tensor ga({m, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double* grow = g.data.data() + i * n;
                    const double* brow = bv.data.data() + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga.data[i * k + p] = flip * acc;
                }
            t.accumulate_grad(a, ga);
        }
        if (t.node(b).requires_grad) {
            Tensor gb({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av.data[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = g.data.data() + i * n;
                    double* gbrow = gb.data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            t.accumulate_grad(b, gb);
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d (NCHW, no bias; add bias with a broadcast add)

inline Var conv2d(Var x, Var w, std::size_t stride = 1, std::size_t pad = 0) {
    Tape& t = *same_tape(x, w);
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    if (xv.rank() != 4 || wv.rank() != 4 || xv.shape[1] != wv.shape[1])
        throw dimension_error("conv2d shape mismatch: x " + shape_str(xv.shape) + ", w " +
                              shape_str(wv.shape));
    const std::size_t B = xv.shape[0], Ci = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    const std::size_t Co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
    if (H + 2 * pad < kh || W + 2 * pad < kw) throw dimension_error("conv2d kernel larger than input");
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;

    Tensor out({B, Co, Ho, Wo});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t ci = 0; ci < Ci; ++ci) {
                const double* xp = xv.data.data() + (b * Ci + ci) * H * W;
                const double* wp = wv.data.data() + (co * Ci + ci) * kh * kw;
                double* op = out.data.data() + (b * Co + co) * Ho * Wo;
                for (std::size_t ho = 0; ho < Ho; ++ho)
                    for (std::size_t p = 0; p < kh; ++p) {
                        const std::ptrdiff_t ih =
                            static_cast<std::ptrdiff_t>(ho * stride + p) - static_cast<std::ptrdiff_t>(pad);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t q = 0; q < kw; ++q) {
                            const double wk = wp[p * kw + q];
                            if (wk == 0.0) continue;
                            for (std::size_t wo = 0; wo < Wo; ++wo) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wo * stride + q) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                op[ho * Wo + wo] += wk * xp[ih * W + iw];
                            }
                        }
                    }
            }

    return t.record(std::move(out), {x.id, w.id},
                    [x = x.id, w = w.id, stride, pad, B, Ci, H, W, Co, kh, kw, Ho, Wo](Tape& t, int self) {
                        const Tensor& g = t.node(self).grad;
                        const Tensor& xv = t.node(x).value;
                        const Tensor& wv = t.node(w).value;
                        const bool need_dx = t.node(x).requires_grad;
                        const bool need_dw = t.node(w).requires_grad;
                        Tensor dx(need_dx ? xv.shape : Shape{0});
                        Tensor dw(need_dw ? wv.shape : Shape{0});
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t co = 0; co < Co; ++co)
                                for (std::size_t ci = 0; ci < Ci; ++ci) {
                                    const double* xp = xv.data.data() + (b * Ci + ci) * H * W;
                                    const double* wp = wv.data.data() + (co * Ci + ci) * kh * kw;
                                    const double* gp = g.data.data() + (b * Co + co) * Ho * Wo;
                                    double* dxp = need_dx ? dx.data.data() + (b * Ci + ci) * H * W : nullptr;
                                    double* dwp = need_dw ? dw.data.data() + (co * Ci + ci) * kh * kw : nullptr;
                                    for (std::size_t ho = 0; ho < Ho; ++ho)
                                        for (std::size_t p = 0; p < kh; ++p) {
                                            const std::ptrdiff_t ih =
                                                static_cast<std::ptrdiff_t>(ho * stride + p) -
                                                static_cast<std::ptrdiff_t>(pad);
                                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                                            for (std::size_t q = 0; q < kw; ++q)
                                                for (std::size_t wo = 0; wo < Wo; ++wo) {
                                                    const std::ptrdiff_t iw =
                                                        static_cast<std::ptrdiff_t>(wo * stride + q) -
                                                        static_cast<std::ptrdiff_t>(pad);
                                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                                                        continue;
                                                    const double gv = gp[ho * Wo + wo];
                                                    if (gv == 0.0) continue;
                                                    if (need_dx) dxp[ih * W + iw] += wp[p * kw + q] * gv;
                                                    if (need_dw) dwp[p * kw + q] += xp[ih * W + iw] * gv;
                                                }
                                        }
                                }
                        if (need_dx) t.accumulate_grad(x, dx);
                        if (need_dw) t.accumulate_grad(w, dw);
                    });
}

// ---------------------------------------------------------------------------
// average pooling (window k, stride s, no padding; partial windows dropped)

inline Var avg_pool(Var x, std::size_t k, std::size_t stride) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    if (xv.rank() != 4) throw dimension_error("avg_pool expects NCHW input");
    const std::size_t B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    if (H < k || W < k) throw dimension_error("avg_pool window larger than input");
    const std::size_t Ho = (H - k) / stride + 1;
    const std::size_t Wo = (W - k) / stride + 1;
    const double inv = 1.0 / static_cast<double>(k * k);
    Tensor out({B, C, Ho, Wo});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* xp = xv.data.data() + bc * H * W;
        double* op = out.data.data() + bc * Ho * Wo;
        for (std::size_t ho = 0; ho < Ho; ++ho)
            for (std::size_t wo = 0; wo < Wo; ++wo) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t q = 0; q < k; ++q)
                        acc += xp[(ho * stride + p) * W + wo * stride + q];
                op[ho * Wo + wo] = acc * inv;
            }
    }
    return t.record(std::move(out), {x.id}, [x = x.id, k, stride, B, C, H, W, Ho, Wo, inv](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        Tensor dx({B, C, H, W});
        for (std::size_t bc = 0; bc < B * C; ++bc) {
            const double* gp = g.data.data() + bc * Ho * Wo;
            double* dxp = dx.data.data() + bc * H * W;
            for (std::size_t ho = 0; ho < Ho; ++ho)
                for (std::size_t wo = 0; wo < Wo; ++wo) {
                    const double gv = gp[ho * Wo + wo] * inv;
                    for (std::size_t p = 0; p < k; ++p)
                        for (std::size_t q = 0; q < k; ++q)
                            dxp[(ho * stride + p) * W + wo * stride + q] += gv;
                }
        }
        t.accumulate_grad(x, dx);
    });
}

}  // namespace ops
}  // namespace afc
