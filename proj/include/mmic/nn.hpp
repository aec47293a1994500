#pragma once

#include "mmic/ops.hpp"

namespace mmic {

// Image tensors are H x W x C row-major (channels innermost); sequence
// tensors are L x D. Ops that touch "the channel axis" always mean the last
// axis, so the same code serves both layouts.

namespace detail {

inline int last_extent(const Shape& s, const char* op) {
    if (s.empty()) throw ShapeError(std::string(op) + ": scalar input has no channel axis");
    return s.back();
}

inline int64_t positions_of(const Shape& s) {
    int64_t p = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) p *= s[i];
    return p;
}

struct Conv2dDims {
    int H, W, C, OH, OW;
};

inline Conv2dDims conv2d_dims(const Shape& x, int kh, int kw, int stride, int pad,
                              const char* op) {
    if (x.size() != 3) throw ShapeError(std::string(op) + ": input must be HxWxC, got " +
                                        shape_str(x));
    if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw ConfigError(std::string(op) + ": negative padding");
    Conv2dDims d;
    d.H = x[0];
    d.W = x[1];
    d.C = x[2];
    int eh = d.H + 2 * pad - kh, ew = d.W + 2 * pad - kw;
    if (eh < 0 || ew < 0)
        throw ShapeError(std::string(op) + ": kernel " + std::to_string(kh) + "x" +
                         std::to_string(kw) + " exceeds padded input " + shape_str(x));
    d.OH = eh / stride + 1;
    d.OW = ew / stride + 1;
    return d;
}

template <typename T>
void check_bias(const Tensor<T>& b, int cout, const char* op) {
    if (!b.valid()) return;
    if (b.shape() != Shape{cout})
        throw ShapeError(std::string(op) + ": bias shape " + shape_str(b.shape()) +
                         ", expected [" + std::to_string(cout) + "]");
}

// shared matmul core for linear and pointwise conv: P positions of Cin values
// against a Cin x Cout weight
template <typename T>
void matmul_positions(int64_t P, int cin, int cout, const T* x, const T* w, const T* b, T* y) {
    for (int64_t p = 0; p < P; ++p) {
        T* yp = y + p * cout;
        if (b)
            for (int co = 0; co < cout; ++co) yp[co] = b[co];
        else
            for (int co = 0; co < cout; ++co) yp[co] = T(0);
        const T* xp = x + p * cin;
        for (int ci = 0; ci < cin; ++ci) {
            const T xv = xp[ci];
            const T* wr = w + static_cast<int64_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) yp[co] += xv * wr[co];
        }
    }
}

template <typename T>
void matmul_positions_backward(int64_t P, int cin, int cout, const T* x, const T* w,
                               const T* go, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
    for (int64_t p = 0; p < P; ++p) {
        const T* gop = go + p * cout;
        const T* xp = x + p * cin;
        if (!gx.empty()) {
            T* gxp = gx.data() + p * cin;
            for (int ci = 0; ci < cin; ++ci) {
                const T* wr = w + static_cast<int64_t>(ci) * cout;
                T acc = T(0);
                for (int co = 0; co < cout; ++co) acc += gop[co] * wr[co];
                gxp[ci] += acc;
            }
        }
        if (!gw.empty()) {
            for (int ci = 0; ci < cin; ++ci) {
                const T xv = xp[ci];
                T* gwr = gw.data() + static_cast<int64_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) gwr[co] += xv * gop[co];
            }
        }
        if (!gb.empty())
            for (int co = 0; co < cout; ++co) gb[co] += gop[co];
    }
}

}  // namespace detail

// y = x @ w (+ b) over the last axis; leading axes pass through
template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> b = {}) {
    Graph<T>& g = b.valid() ? detail::same_graph<T>({x, w, b}, "linear")
                            : detail::same_graph<T>({x, w}, "linear");
    const Shape& ws = w.shape();
    if (ws.size() != 2) throw ShapeError("linear: weight must be CinxCout, got " + shape_str(ws));
    const int cin = ws[0], cout = ws[1];
    if (detail::last_extent(x.shape(), "linear") != cin)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in Cin=" +
                         std::to_string(cin));
    detail::check_bias(b, cout, "linear");
    const int64_t P = detail::positions_of(x.shape());
    Shape out_shape(x.shape());
    out_shape.back() = cout;
    std::vector<T> y(P * cout);
    detail::matmul_positions<T>(P, cin, cout, x.value().data(), w.value().data(),
                                b.valid() ? b.value().data() : nullptr, y.data());
    bool rg = b.valid() ? detail::any_rg<T>({x, w, b}) : detail::any_rg<T>({x, w});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        int32_t bi = b.valid() ? b.id : -1;
        bw = [gp = &g, xi = x.id, wi = w.id, bi, oi, P, cin, cout] {
            auto go = gp->grad(oi);
            detail::matmul_positions_backward<T>(
                P, cin, cout, gp->val(xi).data(), gp->val(wi).data(), go.data(),
                gp->grad_mut(xi), gp->grad_mut(wi), bi >= 0 ? gp->grad_mut(bi) : std::span<T>{});
        };
    }
    return g.record("linear", std::move(out_shape), std::move(y), rg, std::move(bw));
}

// 1x1 convolution: per-pixel linear map, weight Cin x Cout
template <typename T>
Tensor<T> pointwise_conv2d(Tensor<T> x, Tensor<T> w, Tensor<T> b = {}) {
    if (x.shape().size() != 3)
        throw ShapeError("pointwise_conv2d: input must be HxWxC, got " + shape_str(x.shape()));
    Graph<T>& g = b.valid() ? detail::same_graph<T>({x, w, b}, "pointwise_conv2d")
                            : detail::same_graph<T>({x, w}, "pointwise_conv2d");
    const Shape& ws = w.shape();
    if (ws.size() != 2)
        throw ShapeError("pointwise_conv2d: weight must be CinxCout, got " + shape_str(ws));
    const int cin = ws[0], cout = ws[1];
    if (x.shape()[2] != cin)
        throw ShapeError("pointwise_conv2d: input channels " + std::to_string(x.shape()[2]) +
                         " vs weight Cin " + std::to_string(cin));
    detail::check_bias(b, cout, "pointwise_conv2d");
    const int64_t P = static_cast<int64_t>(x.shape()[0]) * x.shape()[1];
    Shape out_shape{x.shape()[0], x.shape()[1], cout};
    std::vector<T> y(P * cout);
    detail::matmul_positions<T>(P, cin, cout, x.value().data(), w.value().data(),
                                b.valid() ? b.value().data() : nullptr, y.data());
    bool rg = b.valid() ? detail::any_rg<T>({x, w, b}) : detail::any_rg<T>({x, w});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        int32_t bi = b.valid() ? b.id : -1;
        bw = [gp = &g, xi = x.id, wi = w.id, bi, oi, P, cin, cout] {
            auto go = gp->grad(oi);
            detail::matmul_positions_backward<T>(
                P, cin, cout, gp->val(xi).data(), gp->val(wi).data(), go.data(),
                gp->grad_mut(xi), gp->grad_mut(wi), bi >= 0 ? gp->grad_mut(bi) : std::span<T>{});
        };
    }
    return g.record("pointwise_conv2d", std::move(out_shape), std::move(y), rg, std::move(bw));
}

// Depthwise conv with optional channel multiplier: kernel (C*m) x kh x kw,
// output channel c*m+j is input channel c filtered by kernel row c*m+j. m = 1
// is the plain depthwise case.
template <typename T>
Tensor<T> depthwise_conv2d(Tensor<T> x, Tensor<T> k, Tensor<T> b = {}, int stride = 1,
                           int pad = 1, int multiplier = 1) {
    Graph<T>& g = b.valid() ? detail::same_graph<T>({x, k, b}, "depthwise_conv2d")
                            : detail::same_graph<T>({x, k}, "depthwise_conv2d");
    const Shape& ks = k.shape();
    if (ks.size() != 3)
        throw ShapeError("depthwise_conv2d: kernel must be (C*m)xKhxKw, got " + shape_str(ks));
    if (multiplier < 1) throw ConfigError("depthwise_conv2d: multiplier must be >= 1");
    const int kh = ks[1], kw = ks[2];
    auto d = detail::conv2d_dims(x.shape(), kh, kw, stride, pad, "depthwise_conv2d");
    const int m = multiplier, cout = d.C * m;
    if (ks[0] != cout)
        throw ShapeError("depthwise_conv2d: kernel rows " + std::to_string(ks[0]) +
                         " != C*multiplier = " + std::to_string(cout));
    detail::check_bias(b, cout, "depthwise_conv2d");

    Shape out_shape{d.OH, d.OW, cout};
    std::vector<T> y(static_cast<int64_t>(d.OH) * d.OW * cout);
    const T* xv = x.value().data();
    const T* kv = k.value().data();
    const T* bv = b.valid() ? b.value().data() : nullptr;
    const int C = d.C, W = d.W, H = d.H, OW = d.OW;
    for (int oh = 0; oh < d.OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
            T* yp = y.data() + (static_cast<int64_t>(oh) * OW + ow) * cout;
            if (bv)
                for (int oc = 0; oc < cout; ++oc) yp[oc] = bv[oc];
            for (int dh = 0; dh < kh; ++dh) {
                const int ih = oh * stride - pad + dh;
                if (ih < 0 || ih >= H) continue;
                for (int dw = 0; dw < kw; ++dw) {
                    const int iw = ow * stride - pad + dw;
                    if (iw < 0 || iw >= W) continue;
                    const T* xp = xv + (static_cast<int64_t>(ih) * W + iw) * C;
                    const int koff = dh * kw + dw;
                    for (int c = 0; c < C; ++c) {
                        const T xvv = xp[c];
                        for (int j = 0; j < m; ++j) {
                            const int oc = c * m + j;
                            yp[oc] += xvv * kv[static_cast<int64_t>(oc) * kh * kw + koff];
                        }
                    }
                }
            }
        }
    }
    bool rg = b.valid() ? detail::any_rg<T>({x, k, b}) : detail::any_rg<T>({x, k});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        int32_t bi = b.valid() ? b.id : -1;
        bw = [gp = &g, xi = x.id, ki = k.id, bi, oi, d, kh, kw, stride, pad, m, cout] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            auto gk = gp->grad_mut(ki);
            auto gb = bi >= 0 ? gp->grad_mut(bi) : std::span<T>{};
            const T* xv2 = gp->val(xi).data();
            const T* kv2 = gp->val(ki).data();
            const int C = d.C, W = d.W, H = d.H, OW = d.OW;
            for (int oh = 0; oh < d.OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const T* gop = go.data() + (static_cast<int64_t>(oh) * OW + ow) * cout;
                    if (!gb.empty())
                        for (int oc = 0; oc < cout; ++oc) gb[oc] += gop[oc];
                    for (int dh = 0; dh < kh; ++dh) {
                        const int ih = oh * stride - pad + dh;
                        if (ih < 0 || ih >= H) continue;
                        for (int dw = 0; dw < kw; ++dw) {
                            const int iw = ow * stride - pad + dw;
                            if (iw < 0 || iw >= W) continue;
                            const int64_t xoff = (static_cast<int64_t>(ih) * W + iw) * C;
                            const int koff = dh * kw + dw;
                            for (int c = 0; c < C; ++c) {
                                for (int j = 0; j < m; ++j) {
                                    const int oc = c * m + j;
                                    const T kvv = kv2[static_cast<int64_t>(oc) * kh * kw + koff];
                                    if (!gx.empty()) gx[xoff + c] += gop[oc] * kvv;
                                    if (!gk.empty())
                                        gk[static_cast<int64_t>(oc) * kh * kw + koff] +=
                                            gop[oc] * xv2[xoff + c];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return g.record("depthwise_conv2d", std::move(out_shape), std::move(y), rg, std::move(bw));
}

// Full convolution, kernel Cout x kh x kw x Cin (stem and downsampling layers)
template <typename T>
Tensor<T> dense_conv2d(Tensor<T> x, Tensor<T> k, Tensor<T> b = {}, int stride = 1,
                       int pad = 0) {
    Graph<T>& g = b.valid() ? detail::same_graph<T>({x, k, b}, "dense_conv2d")
                            : detail::same_graph<T>({x, k}, "dense_conv2d");
    const Shape& ks = k.shape();
    if (ks.size() != 4)
        throw ShapeError("dense_conv2d: kernel must be CoutxKhxKwxCin, got " + shape_str(ks));
    const int cout = ks[0], kh = ks[1], kw = ks[2], cin = ks[3];
    auto d = detail::conv2d_dims(x.shape(), kh, kw, stride, pad, "dense_conv2d");
    if (d.C != cin)
        throw ShapeError("dense_conv2d: input channels " + std::to_string(d.C) +
                         " vs kernel Cin " + std::to_string(cin));
    detail::check_bias(b, cout, "dense_conv2d");

    Shape out_shape{d.OH, d.OW, cout};
    std::vector<T> y(static_cast<int64_t>(d.OH) * d.OW * cout);
    const T* xv = x.value().data();
    const T* kv = k.value().data();
    const T* bv = b.valid() ? b.value().data() : nullptr;
    const int W = d.W, H = d.H, OW = d.OW;
    for (int oh = 0; oh < d.OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
            T* yp = y.data() + (static_cast<int64_t>(oh) * OW + ow) * cout;
            for (int co = 0; co < cout; ++co) yp[co] = bv ? bv[co] : T(0);
            for (int dh = 0; dh < kh; ++dh) {
                const int ih = oh * stride - pad + dh;
                if (ih < 0 || ih >= H) continue;
                for (int dw = 0; dw < kw; ++dw) {
                    const int iw = ow * stride - pad + dw;
                    if (iw < 0 || iw >= W) continue;
                    const T* xp = xv + (static_cast<int64_t>(ih) * W + iw) * cin;
                    for (int co = 0; co < cout; ++co) {
                        const T* kr = kv + ((static_cast<int64_t>(co) * kh + dh) * kw + dw) * cin;
                        T acc = yp[co];
                        for (int ci = 0; ci < cin; ++ci) acc += xp[ci] * kr[ci];
                        yp[co] = acc;
                    }
                }
            }
        }
    }
    bool rg = b.valid() ? detail::any_rg<T>({x, k, b}) : detail::any_rg<T>({x, k});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        int32_t bi = b.valid() ? b.id : -1;
        bw = [gp = &g, xi = x.id, ki = k.id, bi, oi, d, cout, kh, kw, cin, stride, pad] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            auto gk = gp->grad_mut(ki);
            auto gb = bi >= 0 ? gp->grad_mut(bi) : std::span<T>{};
            const T* xv2 = gp->val(xi).data();
            const T* kv2 = gp->val(ki).data();
            const int W = d.W, H = d.H, OW = d.OW;
            for (int oh = 0; oh < d.OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const T* gop = go.data() + (static_cast<int64_t>(oh) * OW + ow) * cout;
                    if (!gb.empty())
                        for (int co = 0; co < cout; ++co) gb[co] += gop[co];
                    for (int dh = 0; dh < kh; ++dh) {
                        const int ih = oh * stride - pad + dh;
                        if (ih < 0 || ih >= H) continue;
                        for (int dw = 0; dw < kw; ++dw) {
                            const int iw = ow * stride - pad + dw;
                            if (iw < 0 || iw >= W) continue;
                            const int64_t xoff = (static_cast<int64_t>(ih) * W + iw) * cin;
                            for (int co = 0; co < cout; ++co) {
                                const T gov = gop[co];
                                const int64_t koff =
                                    ((static_cast<int64_t>(co) * kh + dh) * kw + dw) * cin;
                                if (!gx.empty())
                                    for (int ci = 0; ci < cin; ++ci)
                                        gx[xoff + ci] += gov * kv2[koff + ci];
                                if (!gk.empty())
                                    for (int ci = 0; ci < cin; ++ci)
                                        gk[koff + ci] += gov * xv2[xoff + ci];
                            }
                        }
                    }
                }
            }
        };
    }
    return g.record("dense_conv2d", std::move(out_shape), std::move(y), rg, std::move(bw));
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each position over its channel vector, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, double eps = kLayerNormEps) {
    Graph<T>& g = detail::same_graph<T>({x, gamma, beta}, "layer_norm");
    const int C = detail::last_extent(x.shape(), "layer_norm");
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(C) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const int64_t P = detail::positions_of(x.shape());
    const T* xv = x.value().data();
    const T* gv = gamma.value().data();
    const T* bv = beta.value().data();
    std::vector<T> y(P * C);
    for (int64_t p = 0; p < P; ++p) {
        const T* xp = xv + p * C;
        T mean = T(0);
        for (int c = 0; c < C; ++c) mean += xp[c];
        mean /= T(C);
        T var = T(0);
        for (int c = 0; c < C; ++c) {
            T dlt = xp[c] - mean;
            var += dlt * dlt;
        }
        var /= T(C);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        T* yp = y.data() + p * C;
        for (int c = 0; c < C; ++c) yp[c] = (xp[c] - mean) * inv * gv[c] + bv[c];
    }
    bool rg = detail::any_rg<T>({x, gamma, beta});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, gi = gamma.id, bi = beta.id, oi, P, C, eps] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            auto gg = gp->grad_mut(gi);
            auto gb = gp->grad_mut(bi);
            const T* xv2 = gp->val(xi).data();
            const T* gv2 = gp->val(gi).data();
            for (int64_t p = 0; p < P; ++p) {
                const T* xp = xv2 + p * C;
                const T* gop = go.data() + p * C;
                T mean = T(0);
                for (int c = 0; c < C; ++c) mean += xp[c];
                mean /= T(C);
                T var = T(0);
                for (int c = 0; c < C; ++c) {
                    T dlt = xp[c] - mean;
                    var += dlt * dlt;
                }
                var /= T(C);
                const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                // dL/dx via the two per-position means of g*gamma and g*gamma*xhat
                T mg = T(0), mgx = T(0);
                for (int c = 0; c < C; ++c) {
                    T xhat = (xp[c] - mean) * inv;
                    T gg2 = gop[c] * gv2[c];
                    mg += gg2;
                    mgx += gg2 * xhat;
                }
                mg /= T(C);
                mgx /= T(C);
                for (int c = 0; c < C; ++c) {
                    T xhat = (xp[c] - mean) * inv;
                    if (!gx.empty())
                        gx[p * C + c] += (gop[c] * gv2[c] - mg - xhat * mgx) * inv;
                    if (!gg.empty()) gg[c] += gop[c] * xhat;
                    if (!gb.empty()) gb[c] += gop[c];
                }
            }
        };
    }
    return g.record("layer_norm", x.shape(), std::move(y), rg, std::move(bw));
}

// ---------------- channel bookkeeping ----------------

// Slice [begin, begin+count) of the last axis.
template <typename T>
Tensor<T> channel_slice(Tensor<T> x, int begin, int count) {
    Graph<T>& g = detail::same_graph<T>({x}, "channel_slice");
    const int C = detail::last_extent(x.shape(), "channel_slice");
    if (begin < 0 || count < 1 || begin + count > C)
        throw ShapeError("channel_slice: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for C=" +
                         std::to_string(C));
    const int64_t P = detail::positions_of(x.shape());
    Shape out_shape(x.shape());
    out_shape.back() = count;
    std::vector<T> y(P * count);
    const T* xv = x.value().data();
    for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < count; ++c) y[p * count + c] = xv[p * C + begin + c];
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi, P, C, begin, count] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            if (gx.empty()) return;
            for (int64_t p = 0; p < P; ++p)
                for (int c = 0; c < count; ++c) gx[p * C + begin + c] += go[p * count + c];
        };
    }
    return g.record("channel_slice", std::move(out_shape), std::move(y), rg, std::move(bw));
}

// Splits the channel axis into consecutive groups of the given sizes.
template <typename T>
std::vector<Tensor<T>> channel_partition(Tensor<T> x, const std::vector<int>& sizes) {
    const int C = detail::last_extent(x.shape(), "channel_partition");
    int total = 0;
    for (int s : sizes) {
        if (s < 1) throw ShapeError("channel_partition: group sizes must be positive");
        total += s;
    }
    if (total != C)
        throw ShapeError("channel_partition: sizes sum to " + std::to_string(total) +
                         " but C=" + std::to_string(C));
    std::vector<Tensor<T>> parts;
    parts.reserve(sizes.size());
    int at = 0;
    for (int s : sizes) {
        parts.push_back(channel_slice(x, at, s));
        at += s;
    }
    return parts;
}

template <typename T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("channel_concat: no inputs");
    Graph<T>& g = *parts[0].g;
    const Shape& s0 = parts[0].shape();
    int C = 0;
    std::vector<int> sizes;
    for (const auto& t : parts) {
        if (t.g != &g) throw Error("channel_concat: tensors come from different graphs");
        const Shape& s = t.shape();
        if (s.size() != s0.size() ||
            !std::equal(s.begin(), s.end() - 1, s0.begin()))
            throw ShapeError("channel_concat: leading extents differ: " + shape_str(s0) +
                             " vs " + shape_str(s));
        sizes.push_back(s.back());
        C += s.back();
    }
    const int64_t P = detail::positions_of(s0);
    Shape out_shape(s0);
    out_shape.back() = C;
    std::vector<T> y(P * C);
    int at = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
        const T* xv = parts[i].value().data();
        const int cn = sizes[i];
        for (int64_t p = 0; p < P; ++p)
            for (int c = 0; c < cn; ++c) y[p * C + at + c] = xv[p * cn + c];
        at += cn;
    }
    bool rg = false;
    for (const auto& t : parts) rg = rg || t.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        std::vector<int32_t> ids;
        for (const auto& t : parts) ids.push_back(t.id);
        bw = [gp = &g, ids, sizes, oi, P, C] {
            auto go = gp->grad(oi);
            int at2 = 0;
            for (size_t i = 0; i < ids.size(); ++i) {
                auto gx = gp->grad_mut(ids[i]);
                const int cn = sizes[i];
                if (!gx.empty())
                    for (int64_t p = 0; p < P; ++p)
                        for (int c = 0; c < cn; ++c) gx[p * cn + c] += go[p * C + at2 + c];
                at2 += cn;
            }
        };
    }
    return g.record("channel_concat", std::move(out_shape), std::move(y), rg, std::move(bw));
}

// Group transpose: with n = C/g, input channel a*n+b lands at output b*g+a.
template <typename T>
Tensor<T> channel_shuffle(Tensor<T> x, int groups) {
    Graph<T>& g = detail::same_graph<T>({x}, "channel_shuffle");
    const int C = detail::last_extent(x.shape(), "channel_shuffle");
    if (groups < 1 || C % groups != 0)
        throw ShapeError("channel_shuffle: C=" + std::to_string(C) + " not divisible by groups=" +
                         std::to_string(groups));
    const int n = C / groups;
    const int64_t P = detail::positions_of(x.shape());
    std::vector<int> src(C);  // src[out] = in
    for (int a = 0; a < groups; ++a)
        for (int b = 0; b < n; ++b) src[b * groups + a] = a * n + b;
    std::vector<T> y(P * C);
    const T* xv = x.value().data();
    for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) y[p * C + c] = xv[p * C + src[c]];
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi, P, C, src] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            if (gx.empty()) return;
            for (int64_t p = 0; p < P; ++p)
                for (int c = 0; c < C; ++c) gx[p * C + src[c]] += go[p * C + c];
        };
    }
    return g.record("channel_shuffle", x.shape(), std::move(y), rg, std::move(bw));
}

// H x W x C -> C mean over all positions
template <typename T>
Tensor<T> global_avg_pool(Tensor<T> x) {
    Graph<T>& g = detail::same_graph<T>({x}, "global_avg_pool");
    if (x.shape().size() != 3)
        throw ShapeError("global_avg_pool: input must be HxWxC, got " + shape_str(x.shape()));
    const int C = x.shape()[2];
    const int64_t P = static_cast<int64_t>(x.shape()[0]) * x.shape()[1];
    std::vector<T> y(C, T(0));
    const T* xv = x.value().data();
    for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) y[c] += xv[p * C + c];
    const T invP = T(1) / static_cast<T>(P);
    for (int c = 0; c < C; ++c) y[c] *= invP;
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi, P, C, invP] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            if (gx.empty()) return;
            for (int64_t p = 0; p < P; ++p)
                for (int c = 0; c < C; ++c) gx[p * C + c] += go[c] * invP;
        };
    }
    return g.record("global_avg_pool", Shape{C}, std::move(y), rg, std::move(bw));
}

// Per-channel broadcast multiply: every position of channel c scaled by s[c].
template <typename T>
Tensor<T> channel_scale(Tensor<T> x, Tensor<T> s) {
    Graph<T>& g = detail::same_graph<T>({x, s}, "channel_scale");
    const int C = detail::last_extent(x.shape(), "channel_scale");
    if (s.shape() != Shape{C})
        throw ShapeError("channel_scale: scale must be [" + std::to_string(C) + "], got " +
                         shape_str(s.shape()));
    const int64_t P = detail::positions_of(x.shape());
    std::vector<T> y(P * C);
    const T* xv = x.value().data();
    const T* sv = s.value().data();
    for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) y[p * C + c] = xv[p * C + c] * sv[c];
    bool rg = detail::any_rg<T>({x, s});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, si = s.id, oi, P, C] {
            auto go = gp->grad(oi);
            auto gx = gp->grad_mut(xi);
            auto gs = gp->grad_mut(si);
            const T* xv2 = gp->val(xi).data();
            const T* sv2 = gp->val(si).data();
            for (int64_t p = 0; p < P; ++p)
                for (int c = 0; c < C; ++c) {
                    if (!gx.empty()) gx[p * C + c] += go[p * C + c] * sv2[c];
                    if (!gs.empty()) gs[c] += go[p * C + c] * xv2[p * C + c];
                }
        };
    }
    return g.record("channel_scale", x.shape(), std::move(y), rg, std::move(bw));
}

// 1-D convolution along the channel axis of a vector (zero padded, odd kernel);
// the channel-attention mixing step
template <typename T>
Tensor<T> conv1d_channels(Tensor<T> s, Tensor<T> w) {
    Graph<T>& g = detail::same_graph<T>({s, w}, "conv1d_channels");
    if (s.shape().size() != 1)
        throw ShapeError("conv1d_channels: input must be rank 1, got " + shape_str(s.shape()));
    if (w.shape().size() != 1 || w.shape()[0] % 2 == 0)
        throw ShapeError("conv1d_channels: kernel must be rank 1 with odd length, got " +
                         shape_str(w.shape()));
    const int C = s.shape()[0], K = w.shape()[0], half = K / 2;
    std::vector<T> y(C, T(0));
    const T* sv = s.value().data();
    const T* wv = w.value().data();
    for (int c = 0; c < C; ++c) {
        T acc = T(0);
        for (int t = 0; t < K; ++t) {
            const int j = c + t - half;
            if (j >= 0 && j < C) acc += wv[t] * sv[j];
        }
        y[c] = acc;
    }
    bool rg = detail::any_rg<T>({s, w});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, si = s.id, wi = w.id, oi, C, K, half] {
            auto go = gp->grad(oi);
            auto gs = gp->grad_mut(si);
            auto gw = gp->grad_mut(wi);
            const T* sv2 = gp->val(si).data();
            const T* wv2 = gp->val(wi).data();
            for (int c = 0; c < C; ++c) {
                for (int t = 0; t < K; ++t) {
                    const int j = c + t - half;
                    if (j < 0 || j >= C) continue;
                    if (!gs.empty()) gs[j] += go[c] * wv2[t];
                    if (!gw.empty()) gw[t] += go[c] * sv2[j];
                }
            }
        };
    }
    return g.record("conv1d_channels", Shape{C}, std::move(y), rg, std::move(bw));
}

// Mean cross-entropy over the batch; logits are BxK (or K for a single item).
// Stabilized by max subtraction before the exp.
template <typename T>
Tensor<T> cross_entropy(Tensor<T> logits, const std::vector<int>& labels) {
    Graph<T>& g = detail::same_graph<T>({logits}, "cross_entropy");
    const Shape& s = logits.shape();
    int64_t B;
    int K;
    if (s.size() == 1) {
        B = 1;
        K = s[0];
    } else if (s.size() == 2) {
        B = s[0];
        K = s[1];
    } else {
        throw ShapeError("cross_entropy: logits must be BxK or K, got " + shape_str(s));
    }
    if (static_cast<int64_t>(labels.size()) != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    for (int lb : labels)
        if (lb < 0 || lb >= K)
            throw Error("cross_entropy: label " + std::to_string(lb) + " out of range [0, " +
                        std::to_string(K) + ")");
    const T* lv = logits.value().data();
    // softmax probabilities are saved for the backward closure
    std::vector<T> probs(B * K);
    T loss = T(0);
    for (int64_t b = 0; b < B; ++b) {
        const T* row = lv + b * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T z = T(0);
        for (int k = 0; k < K; ++k) {
            T e = std::exp(row[k] - mx);
            probs[b * K + k] = e;
            z += e;
        }
        for (int k = 0; k < K; ++k) probs[b * K + k] /= z;
        loss += std::log(z) - (row[labels[b]] - mx);
    }
    loss /= static_cast<T>(B);
    bool rg = logits.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, li = logits.id, oi, B, K, labels, probs = std::move(probs)] {
            T go = gp->grad(oi)[0];
            auto gl = gp->grad_mut(li);
            if (gl.empty()) return;
            const T invB = T(1) / static_cast<T>(B);
            for (int64_t b = 0; b < B; ++b) {
                for (int k = 0; k < K; ++k) {
                    T p = probs[b * K + k];
                    T target = (k == labels[b]) ? T(1) : T(0);
                    gl[b * K + k] += go * (p - target) * invB;
                }
            }
        };
    }
    return g.record("cross_entropy", Shape{}, {loss}, rg, std::move(bw));
}

}  // namespace mmic
