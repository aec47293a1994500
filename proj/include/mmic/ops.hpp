#pragma once

#include "mmic/graph.hpp"

namespace mmic {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> identity(Tensor<T> x) {
    Graph<T>& g = detail::same_graph<T>({x}, "identity");
    std::vector<T> v(x.value().begin(), x.value().end());
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi] { detail::axpy<T>(gp->grad_mut(xi), T(1), gp->grad(oi)); };
    }
    return g.record("identity", x.shape(), std::move(v), rg, std::move(bw));
}

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    Graph<T>& g = detail::same_graph<T>({a, b}, "add");
    detail::require_same_shape(a, b, "add");
    auto av = a.value(), bv = b.value();
    std::vector<T> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    bool rg = detail::any_rg<T>({a, b});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, ai = a.id, bi = b.id, oi] {
            auto go = gp->grad(oi);
            detail::axpy<T>(gp->grad_mut(ai), T(1), go);
            detail::axpy<T>(gp->grad_mut(bi), T(1), go);
        };
    }
    return g.record("add", a.shape(), std::move(v), rg, std::move(bw));
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    Graph<T>& g = detail::same_graph<T>({a, b}, "mul");
    detail::require_same_shape(a, b, "mul");
    auto av = a.value(), bv = b.value();
    std::vector<T> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    bool rg = detail::any_rg<T>({a, b});
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, ai = a.id, bi = b.id, oi] {
            auto go = gp->grad(oi);
            auto av2 = gp->val(ai), bv2 = gp->val(bi);
            auto ga = gp->grad_mut(ai);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv2[i];
            auto gb = gp->grad_mut(bi);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av2[i];
        };
    }
    return g.record("mul", a.shape(), std::move(v), rg, std::move(bw));
}

// multiply by a compile-time-known constant (not a graph tensor)
template <typename T>
Tensor<T> scale(Tensor<T> x, double s) {
    Graph<T>& g = detail::same_graph<T>({x}, "scale");
    auto xv = x.value();
    std::vector<T> v(xv.size());
    const T st = static_cast<T>(s);
    for (size_t i = 0; i < v.size(); ++i) v[i] = xv[i] * st;
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi, st] { detail::axpy<T>(gp->grad_mut(xi), st, gp->grad(oi)); };
    }
    return g.record("scale", x.shape(), std::move(v), rg, std::move(bw));
}

template <typename T>
Tensor<T> exp(Tensor<T> x) {
    Graph<T>& g = detail::same_graph<T>({x}, "exp");
    auto xv = x.value();
    std::vector<T> v(xv.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::exp(xv[i]);
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi] {
            auto go = gp->grad(oi);
            auto ov = gp->val(oi);
            auto gx = gp->grad_mut(xi);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * ov[i];
        };
    }
    return g.record("exp", x.shape(), std::move(v), rg, std::move(bw));
}

// full reduction to a rank-0 scalar
template <typename T>
Tensor<T> sum(Tensor<T> x) {
    Graph<T>& g = detail::same_graph<T>({x}, "sum");
    auto xv = x.value();
    T acc = T(0);
    for (T e : xv) acc += e;
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi] {
            T go = gp->grad(oi)[0];
            auto gx = gp->grad_mut(xi);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += go;
        };
    }
    return g.record("sum", Shape{}, {acc}, rg, std::move(bw));
}

// ---------------- activations ----------------

enum class Act { relu, sigmoid, silu, gelu, softplus };

namespace detail {

template <typename T>
inline T sigmoid_v(T x) {
    // split on sign to avoid exp overflow at large |x|
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline T softplus_v(T x) {
    if (x > T(30)) return x;  // log1p(exp(x)) == x to machine precision here
    return std::log1p(std::exp(x));
}

template <typename T>
inline T act_forward(Act k, T x) {
    switch (k) {
        case Act::relu: return x > T(0) ? x : T(0);
        case Act::sigmoid: return sigmoid_v(x);
        case Act::silu: return x * sigmoid_v(x);
        case Act::gelu: {
            // exact erf form
            T phi = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
            return x * phi;
        }
        case Act::softplus: return softplus_v(x);
    }
    throw Error("activation: bad kind");
}

template <typename T>
inline T act_derivative(Act k, T x) {
    switch (k) {
        case Act::relu: return x > T(0) ? T(1) : T(0);
        case Act::sigmoid: {
            T s = sigmoid_v(x);
            return s * (T(1) - s);
        }
        case Act::silu: {
            T s = sigmoid_v(x);
            return s * (T(1) + x * (T(1) - s));
        }
        case Act::gelu: {
            T phi = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
            T pdf = std::exp(-x * x / T(2)) * T(0.3989422804014326779);
            return phi + x * pdf;
        }
        case Act::softplus: return sigmoid_v(x);
    }
    throw Error("activation: bad kind");
}

inline const char* act_name(Act k) {
    switch (k) {
        case Act::relu: return "relu";
        case Act::sigmoid: return "sigmoid";
        case Act::silu: return "silu";
        case Act::gelu: return "gelu";
        case Act::softplus: return "softplus";
    }
    return "activation";
}

}  // namespace detail

template <typename T>
Tensor<T> activation(Tensor<T> x, Act k) {
    Graph<T>& g = detail::same_graph<T>({x}, "activation");
    auto xv = x.value();
    std::vector<T> v(xv.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = detail::act_forward(k, xv[i]);
    bool rg = x.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = x.id, oi, k] {
            auto go = gp->grad(oi);
            auto xv2 = gp->val(xi);
            auto gx = gp->grad_mut(xi);
            for (size_t i = 0; i < gx.size(); ++i)
                gx[i] += go[i] * detail::act_derivative(k, xv2[i]);
        };
    }
    return g.record(detail::act_name(k), x.shape(), std::move(v), rg, std::move(bw));
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
    return activation(x, Act::relu);
}
template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
    return activation(x, Act::sigmoid);
}
template <typename T>
Tensor<T> silu(Tensor<T> x) {
    return activation(x, Act::silu);
}
template <typename T>
Tensor<T> gelu(Tensor<T> x) {
    return activation(x, Act::gelu);
}
template <typename T>
Tensor<T> softplus(Tensor<T> x) {
    return activation(x, Act::softplus);
}

}  // namespace mmic
