// Forward kernels and backward rules for every primitive the models need.
// All ops are pure: they allocate a fresh output tensor and, when a graph is
// active and an input requires gradients, record one backward closure.
// Binary elementwise ops support numpy-style trailing-dimension broadcast.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ad/tensor.hpp"

namespace dfba {

namespace detail {

// Largest exponent argument that keeps exp() finite, per precision.
template <typename T>
constexpr T exp_cap() {
    return std::is_same_v<T, float> ? T(85) : T(700);
}

inline constexpr double kEps = 1e-12; // guard for log arguments and norm denominators

struct BcastPlan {
    Shape out_shape;
    std::vector<int64_t> stride_a, stride_b; // 0 on broadcast dims
    int64_t n = 0;
};

inline BcastPlan make_bcast_plan(const char* op, const Shape& a, const Shape& b) {
    const size_t ra = a.size(), rb = b.size();
    const size_t r = std::max(ra, rb);
    BcastPlan p;
    p.out_shape.assign(r, 1);
    p.stride_a.assign(r, 0);
    p.stride_b.assign(r, 0);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        }
        p.out_shape[i] = std::max(da, db);
    }
    // Contiguous strides of each operand, mapped onto output dims.
    int64_t sa = 1, sb = 1;
    for (size_t i = r; i-- > 0;) {
        const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (i >= r - ra) {
            p.stride_a[i] = (da == 1 && p.out_shape[i] > 1) ? 0 : sa;
            sa *= da;
        }
        if (i >= r - rb) {
            p.stride_b[i] = (db == 1 && p.out_shape[i] > 1) ? 0 : sb;
            sb *= db;
        }
    }
    p.n = numel_of(p.out_shape);
    return p;
}

// Calls fn(out_index, a_offset, b_offset) for every output element.
template <class Fn>
void for_each_bcast(const BcastPlan& p, Fn&& fn) {
    const size_t r = p.out_shape.size();
    std::vector<int64_t> coord(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < p.n; ++i) {
        fn(i, oa, ob);
        for (size_t d = r; d-- > 0;) {
            ++coord[d];
            oa += p.stride_a[d];
            ob += p.stride_b[d];
            if (coord[d] < p.out_shape[d]) break;
            coord[d] = 0;
            oa -= p.stride_a[d] * p.out_shape[d];
            ob -= p.stride_b[d] * p.out_shape[d];
        }
    }
}

template <typename T>
void accumulate_grad(TensorData<T>& t) {
    if (t.g.empty()) t.g.assign(t.v.size(), T(0));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise unary

template <typename T, class F, class DF>
Tensor<T> unary_op(const char* op, const Tensor<T>& x, F fwd, DF dfdx) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record(op, od, [xd, od, dfdx] {
            detail::accumulate_grad(*xd);
            for (size_t i = 0; i < xd->v.size(); ++i) {
                xd->g[i] += od->g[i] * dfdx(xd->v[i], od->v[i]);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op<T>(
        "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

// exp with a saturation guard so finite inputs never overflow to inf.
template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    const T cap = detail::exp_cap<T>();
    return unary_op<T>(
        "exp", x, [cap](T v) { return std::exp(std::min(v, cap)); },
        [cap](T v, T y) { return v <= cap ? y : T(0); });
}

// log(max(x, eps)); the guard keeps zero arguments finite per the numeric policy.
template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    const T eps = T(detail::kEps);
    return unary_op<T>(
        "log", x, [eps](T v) { return std::log(std::max(v, eps)); },
        [eps](T v, T) { return v > eps ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary_op<T>(
        "abs", x, [](T v) { return std::fabs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary_op<T>(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op<T>(
        "sigmoid", x,
        [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : T(1) - T(1) / (T(1) + std::exp(v));
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (lo > hi) throw ValueError("clamp: lo > hi");
    return unary_op<T>(
        "clamp", x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
    return clamp(x, lo, std::numeric_limits<T>::max());
}

// sqrt with a guarded derivative; the guard keeps norm gradients bounded at 0.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    const T eps = T(detail::kEps);
    return unary_op<T>(
        "sqrt", x, [](T v) { return std::sqrt(std::max(v, T(0))); },
        [eps](T, T y) { return T(0.5) / std::max(y, eps); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return unary_op<T>(
        "scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> shift(const Tensor<T>& x, T c) {
    return unary_op<T>(
        "shift", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// elementwise binary with broadcast

namespace detail {

template <typename T, class F, class DA, class DB>
Tensor<T> binary_op(const char* op, const Tensor<T>& a, const Tensor<T>& b, F fwd, DA dfda, DB dfdb) {
    const BcastPlan plan = make_bcast_plan(op, a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros(plan.out_shape);
    const T* av = a.values().data();
    const T* bv = b.values().data();
    T* ov = out.values().data();
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < plan.n; ++i) ov[i] = fwd(av[i], bv[i]);
    } else {
        for_each_bcast(plan, [&](int64_t i, int64_t oa, int64_t ob) { ov[i] = fwd(av[oa], bv[ob]); });
    }
    Graph<T>* g = Graph<T>::active();
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ad = a.data();
        auto bd = b.data();
        auto od = out.data();
        g->record(op, od, [plan, ad, bd, od, dfda, dfdb] {
            const bool need_a = ad->requires_grad;
            const bool need_b = bd->requires_grad;
            if (need_a) accumulate_grad(*ad);
            if (need_b) accumulate_grad(*bd);
            for_each_bcast(plan, [&](int64_t i, int64_t oa, int64_t ob) {
                const T go = od->g[i];
                if (need_a) ad->g[oa] += go * dfda(ad->v[oa], bd->v[ob]);
                if (need_b) bd->g[ob] += go * dfdb(ad->v[oa], bd->v[ob]);
            });
        });
    }
    return out;
}

} // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (T v : b.values()) {
        if (v == T(0)) throw ValueError("div: zero denominator element");
    }
    return detail::binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }
template <typename T> Tensor<T> operator*(const Tensor<T>& x, T c) { return scale(x, c); }
template <typename T> Tensor<T> operator*(T c, const Tensor<T>& x) { return scale(x, c); }
template <typename T> Tensor<T> operator+(const Tensor<T>& x, T c) { return shift(x, c); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x, T c) { return shift(x, -c); }

// ---------------------------------------------------------------------------
// matrix ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    const T* av = a.values().data();
    const T* bv = b.values().data();
    T* ov = out.values().data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const T aip = av[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = bv + p * n;
            T* orow = ov + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    Graph<T>* g = Graph<T>::active();
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ad = a.data();
        auto bd = b.data();
        auto od = out.data();
        g->record("matmul", od, [ad, bd, od, m, k, n] {
            const T* go = od->g.data();
            if (ad->requires_grad) {
                detail::accumulate_grad(*ad);
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t p = 0; p < k; ++p) {
                        T acc = T(0);
                        for (int64_t j = 0; j < n; ++j) acc += go[i * n + j] * bd->v[p * n + j];
                        ad->g[i * k + p] += acc;
                    }
                }
            }
            if (bd->requires_grad) {
                detail::accumulate_grad(*bd);
                for (int64_t p = 0; p < k; ++p) {
                    for (int64_t j = 0; j < n; ++j) {
                        T acc = T(0);
                        for (int64_t i = 0; i < m; ++i) acc += ad->v[i * k + p] * go[i * n + j];
                        bd->g[p * n + j] += acc;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, m});
    const T* xv = x.values().data();
    T* ov = out.values().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("transpose", od, [xd, od, m, n] {
            detail::accumulate_grad(*xd);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) xd->g[i * n + j] += od->g[j * m + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation) and its transpose

namespace detail {

template <typename T>
void conv_shapes(const char* op, const Tensor<T>& x, const Tensor<T>& k, int64_t stride, int64_t pad) {
    if (x.rank() != 4 || k.rank() != 4) {
        throw ShapeError(std::string(op) + ": expected rank-4 input and kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(k.shape()));
    }
    if (stride < 1 || pad < 0) throw ValueError(std::string(op) + ": invalid stride/padding");
}

} // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, int64_t stride, int64_t pad) {
    detail::conv_shapes("conv2d", x, k, stride, pad);
    const int64_t bn = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t co = k.dim(0), kci = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (ci != kci) {
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match kernel " + shape_str(k.shape()));
    }
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (w + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || w + 2 * pad < kw || oh < 1 || ow < 1) {
        throw ShapeError("conv2d: invalid geometry, computed output " +
                         shape_str({bn, co, oh, ow}));
    }
    Tensor<T> out = Tensor<T>::zeros({bn, co, oh, ow});
    const T* xv = x.values().data();
    const T* kv = k.values().data();
    T* ov = out.values().data();
    for (int64_t b = 0; b < bn; ++b)
        for (int64_t o = 0; o < co; ++o)
            for (int64_t yo = 0; yo < oh; ++yo)
                for (int64_t xo = 0; xo < ow; ++xo) {
                    T acc = T(0);
                    for (int64_t c = 0; c < ci; ++c)
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t yi = yo * stride - pad + ky;
                            if (yi < 0 || yi >= h) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t xi = xo * stride - pad + kx;
                                if (xi < 0 || xi >= w) continue;
                                acc += xv[((b * ci + c) * h + yi) * w + xi] *
                                       kv[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    ov[((b * co + o) * oh + yo) * ow + xo] = acc;
                }
    Graph<T>* g = Graph<T>::active();
    if (g && (x.requires_grad() || k.requires_grad())) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto kd = k.data();
        auto od = out.data();
        g->record("conv2d", od, [xd, kd, od, bn, ci, h, w, co, kh, kw, oh, ow, stride, pad] {
            const T* go = od->g.data();
            const bool need_x = xd->requires_grad;
            const bool need_k = kd->requires_grad;
            if (need_x) detail::accumulate_grad(*xd);
            if (need_k) detail::accumulate_grad(*kd);
            for (int64_t b = 0; b < bn; ++b)
                for (int64_t o = 0; o < co; ++o)
                    for (int64_t yo = 0; yo < oh; ++yo)
                        for (int64_t xo = 0; xo < ow; ++xo) {
                            const T gv = go[((b * co + o) * oh + yo) * ow + xo];
                            if (gv == T(0)) continue;
                            for (int64_t c = 0; c < ci; ++c)
                                for (int64_t ky = 0; ky < kh; ++ky) {
                                    const int64_t yi = yo * stride - pad + ky;
                                    if (yi < 0 || yi >= h) continue;
                                    for (int64_t kx = 0; kx < kw; ++kx) {
                                        const int64_t xi = xo * stride - pad + kx;
                                        if (xi < 0 || xi >= w) continue;
                                        const int64_t xoff = ((b * ci + c) * h + yi) * w + xi;
                                        const int64_t koff = ((o * ci + c) * kh + ky) * kw + kx;
                                        if (need_x) xd->g[xoff] += gv * kd->v[koff];
                                        if (need_k) kd->g[koff] += gv * xd->v[xoff];
                                    }
                                }
                        }
        });
    }
    return out;
}

// Adjoint of conv2d with respect to its input: kernel layout [ci_in x co_out x kh x kw]
// matches conv2d's [co x ci x kh x kw] read the other way around, so the same
// kernel tensor satisfies <conv2d(x,k), y> == <x, conv_transpose2d(y,k)>.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& k, int64_t stride, int64_t pad) {
    detail::conv_shapes("conv_transpose2d", x, k, stride, pad);
    const int64_t bn = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t kin = k.dim(0), cout = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (cin != kin) {
        throw ShapeError("conv_transpose2d: input channels " + shape_str(x.shape()) +
                         " do not match kernel " + shape_str(k.shape()));
    }
    const int64_t oh = (h - 1) * stride - 2 * pad + kh;
    const int64_t ow = (w - 1) * stride - 2 * pad + kw;
    if (oh < 1 || ow < 1) {
        throw ShapeError("conv_transpose2d: invalid geometry, computed output " +
                         shape_str({bn, cout, oh, ow}));
    }
    Tensor<T> out = Tensor<T>::zeros({bn, cout, oh, ow});
    const T* xv = x.values().data();
    const T* kv = k.values().data();
    T* ov = out.values().data();
    for (int64_t b = 0; b < bn; ++b)
        for (int64_t o = 0; o < cin; ++o)
            for (int64_t yo = 0; yo < h; ++yo)
                for (int64_t xo = 0; xo < w; ++xo) {
                    const T xval = xv[((b * cin + o) * h + yo) * w + xo];
                    if (xval == T(0)) continue;
                    for (int64_t c = 0; c < cout; ++c)
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t yi = yo * stride - pad + ky;
                            if (yi < 0 || yi >= oh) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t xi = xo * stride - pad + kx;
                                if (xi < 0 || xi >= ow) continue;
                                ov[((b * cout + c) * oh + yi) * ow + xi] +=
                                    xval * kv[((o * cout + c) * kh + ky) * kw + kx];
                            }
                        }
                }
    Graph<T>* g = Graph<T>::active();
    if (g && (x.requires_grad() || k.requires_grad())) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto kd = k.data();
        auto od = out.data();
        g->record("conv_transpose2d", od,
                  [xd, kd, od, bn, cin, h, w, cout, kh, kw, oh, ow, stride, pad] {
                      const T* go = od->g.data();
                      const bool need_x = xd->requires_grad;
                      const bool need_k = kd->requires_grad;
                      if (need_x) detail::accumulate_grad(*xd);
                      if (need_k) detail::accumulate_grad(*kd);
                      for (int64_t b = 0; b < bn; ++b)
                          for (int64_t o = 0; o < cin; ++o)
                              for (int64_t yo = 0; yo < h; ++yo)
                                  for (int64_t xo = 0; xo < w; ++xo) {
                                      const int64_t xoff = ((b * cin + o) * h + yo) * w + xo;
                                      for (int64_t c = 0; c < cout; ++c)
                                          for (int64_t ky = 0; ky < kh; ++ky) {
                                              const int64_t yi = yo * stride - pad + ky;
                                              if (yi < 0 || yi >= oh) continue;
                                              for (int64_t kx = 0; kx < kw; ++kx) {
                                                  const int64_t xi = xo * stride - pad + kx;
                                                  if (xi < 0 || xi >= ow) continue;
                                                  const int64_t ooff =
                                                      ((b * cout + c) * oh + yi) * ow + xi;
                                                  const int64_t koff =
                                                      ((o * cout + c) * kh + ky) * kw + kx;
                                                  if (need_x) xd->g[xoff] += go[ooff] * kd->v[koff];
                                                  if (need_k) kd->g[koff] += go[ooff] * xd->v[xoff];
                                              }
                                          }
                                  }
                  });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    }
    Tensor<T> out(std::move(shape), x.values());
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("reshape", od, [xd, od] {
            detail::accumulate_grad(*xd);
            for (size_t i = 0; i < xd->g.size(); ++i) xd->g[i] += od->g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw ShapeError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t r = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({r, ca + cb});
    for (int64_t i = 0; i < r; ++i) {
        std::copy_n(a.values().data() + i * ca, ca, out.values().data() + i * (ca + cb));
        std::copy_n(b.values().data() + i * cb, cb, out.values().data() + i * (ca + cb) + ca);
    }
    Graph<T>* g = Graph<T>::active();
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ad = a.data();
        auto bd = b.data();
        auto od = out.data();
        g->record("concat_cols", od, [ad, bd, od, r, ca, cb] {
            if (ad->requires_grad) {
                detail::accumulate_grad(*ad);
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < ca; ++j) ad->g[i * ca + j] += od->g[i * (ca + cb) + j];
            }
            if (bd->requires_grad) {
                detail::accumulate_grad(*bd);
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < cb; ++j)
                        bd->g[i * cb + j] += od->g[i * (ca + cb) + ca + j];
            }
        });
    }
    return out;
}

// Gathers rows along the first axis; backward scatter-adds, so duplicate
// indices accumulate.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& ids) {
    if (x.rank() < 1) throw ShapeError("gather_rows: input must have rank >= 1");
    const int64_t rows = x.dim(0);
    const int64_t row_size = x.numel() / rows;
    for (int64_t id : ids) {
        if (id < 0 || id >= rows) {
            throw ValueError("gather_rows: index " + std::to_string(id) + " out of range [0, " +
                             std::to_string(rows) + ")");
        }
    }
    Shape oshape = x.shape();
    oshape[0] = static_cast<int64_t>(ids.size());
    Tensor<T> out = Tensor<T>::zeros(oshape);
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(x.values().data() + ids[i] * row_size, row_size,
                    out.values().data() + static_cast<int64_t>(i) * row_size);
    }
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("gather_rows", od, [xd, od, ids, row_size] {
            detail::accumulate_grad(*xd);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int64_t j = 0; j < row_size; ++j)
                    xd->g[ids[i] * row_size + j] += od->g[static_cast<int64_t>(i) * row_size + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, const std::vector<int64_t>& idxs) {
    for (int64_t id : idxs) {
        if (id < 0 || id >= x.numel()) throw ValueError("gather_flat: index out of range");
    }
    Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(idxs.size())});
    for (size_t i = 0; i < idxs.size(); ++i) out.values()[i] = x.values()[idxs[i]];
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("gather_flat", od, [xd, od, idxs] {
            detail::accumulate_grad(*xd);
            for (size_t i = 0; i < idxs.size(); ++i) xd->g[idxs[i]] += od->g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("sum", od, [xd, od] {
            detail::accumulate_grad(*xd);
            const T go = od->g[0];
            for (auto& v : xd->g) v += go;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int64_t axis, bool keepdim) {
    const int64_t r = static_cast<int64_t>(x.rank());
    if (axis < 0 || axis >= r) {
        throw ShapeError("sum: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    }
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int64_t d = axis + 1; d < r; ++d) inner *= x.dim(d);
    const int64_t mid = x.dim(axis);
    Shape oshape;
    for (int64_t d = 0; d < r; ++d) {
        if (d == axis) {
            if (keepdim) oshape.push_back(1);
        } else {
            oshape.push_back(x.dim(d));
        }
    }
    if (oshape.empty()) oshape.push_back(1);
    Tensor<T> out = Tensor<T>::zeros(oshape);
    const T* xv = x.values().data();
    T* ov = out.values().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t m = 0; m < mid; ++m)
            for (int64_t i = 0; i < inner; ++i) ov[o * inner + i] += xv[(o * mid + m) * inner + i];
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("sum_axis", od, [xd, od, outer, mid, inner] {
            detail::accumulate_grad(*xd);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t m = 0; m < mid; ++m)
                    for (int64_t i = 0; i < inner; ++i)
                        xd->g[(o * mid + m) * inner + i] += od->g[o * inner + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int64_t axis, bool keepdim) {
    return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.dim(axis)));
}

template <typename T>
Tensor<T> l1_norm(const Tensor<T>& x) {
    return sum(abs(x));
}

template <typename T>
Tensor<T> l1_norm(const Tensor<T>& x, int64_t axis, bool keepdim) {
    return sum(abs(x), axis, keepdim);
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
    return sqrt(sum(mul(x, x)));
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x, int64_t axis, bool keepdim) {
    return sqrt(sum(mul(x, x), axis, keepdim));
}

template <typename T>
Tensor<T> frobenius_norm(const Tensor<T>& x) {
    return l2_norm(x);
}

// ---------------------------------------------------------------------------
// classification heads

// Row-wise softmax with max subtraction, rank-2 input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("softmax: expected rank 2, got " + shape_str(x.shape()));
    const int64_t b = x.dim(0), m = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.values().data();
    T* ov = out.values().data();
    for (int64_t i = 0; i < b; ++i) {
        const T* row = xv + i * m;
        T mx = row[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < m; ++j) {
            ov[i * m + j] = std::exp(row[j] - mx);
            denom += ov[i * m + j];
        }
        for (int64_t j = 0; j < m; ++j) ov[i * m + j] /= denom;
    }
    if (Graph<T>* g = Graph<T>::active(); g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data();
        auto od = out.data();
        g->record("softmax", od, [xd, od, b, m] {
            detail::accumulate_grad(*xd);
            for (int64_t i = 0; i < b; ++i) {
                T dot = T(0);
                for (int64_t j = 0; j < m; ++j) dot += od->g[i * m + j] * od->v[i * m + j];
                for (int64_t j = 0; j < m; ++j)
                    xd->g[i * m + j] += od->v[i * m + j] * (od->g[i * m + j] - dot);
            }
        });
    }
    return out;
}

enum class Reduction { Mean, Sum };

// Numerically stable -log softmax(logits)[label], reduced across the batch.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int64_t>& labels,
                                Reduction reduction = Reduction::Mean) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_cross_entropy: expected rank-2 logits, got " +
                         shape_str(logits.shape()));
    }
    const int64_t b = logits.dim(0), m = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != b) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
    }
    for (int64_t lab : labels) {
        if (lab < 0 || lab >= m) {
            throw ValueError("softmax_cross_entropy: label " + std::to_string(lab) +
                             " out of range [0, " + std::to_string(m) + ")");
        }
    }
    const T* zv = logits.values().data();
    std::vector<T> probs(static_cast<size_t>(b * m));
    T total = T(0);
    for (int64_t i = 0; i < b; ++i) {
        const T* row = zv + i * m;
        T mx = row[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < m; ++j) {
            probs[i * m + j] = std::exp(row[j] - mx);
            denom += probs[i * m + j];
        }
        for (int64_t j = 0; j < m; ++j) probs[i * m + j] /= denom;
        total += std::log(denom) + mx - row[labels[i]];
    }
    const T scale_v = reduction == Reduction::Mean ? T(1) / static_cast<T>(b) : T(1);
    Tensor<T> out = Tensor<T>::scalar(total * scale_v);
    if (Graph<T>* g = Graph<T>::active(); g && logits.requires_grad()) {
        out.set_requires_grad(true);
        auto zd = logits.data();
        auto od = out.data();
        g->record("softmax_cross_entropy", od,
                  [zd, od, probs = std::move(probs), labels, b, m, scale_v] {
                      detail::accumulate_grad(*zd);
                      const T go = od->g[0] * scale_v;
                      for (int64_t i = 0; i < b; ++i)
                          for (int64_t j = 0; j < m; ++j) {
                              const T onehot = j == labels[i] ? T(1) : T(0);
                              zd->g[i * m + j] += go * (probs[i * m + j] - onehot);
                          }
                  });
    }
    return out;
}

// cos(a, b) for vectors, composed from primitives; denominators are clamped
// at eps so zero vectors stay finite.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel()) {
        throw ShapeError("cosine_similarity: size mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor<T> dot = sum(mul(a, b));
    Tensor<T> denom = clamp_min(mul(l2_norm(a), l2_norm(b)), T(detail::kEps));
    return div(dot, denom);
}

// Rows scaled to unit L2 norm; rows of zeros stay zero (eps-guarded).
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("normalize_rows: expected rank 2");
    Tensor<T> norms = clamp_min(l2_norm(x, 1, /*keepdim=*/true), T(detail::kEps));
    return div(x, norms);
}

// Pairwise cosine similarity between rows of a and rows of b -> [ra x rb].
template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
    return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

// ---------------------------------------------------------------------------
// value-level helpers (no gradients)

template <typename T>
std::vector<int64_t> argmax_rows(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("argmax_rows: expected rank 2");
    const int64_t b = x.dim(0), m = x.dim(1);
    std::vector<int64_t> out(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        const T* row = x.values().data() + i * m;
        int64_t best = 0;
        for (int64_t j = 1; j < m; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[i] = best;
    }
    return out;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace dfba
