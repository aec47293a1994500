#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>

#include "mmic/core.hpp"

namespace mmic {

template <typename T>
class Graph;

// Lightweight handle into a Graph. Valid only as long as its graph lives;
// copying is free. A default-constructed handle is "none".
template <typename T>
struct Tensor {
    Graph<T>* g = nullptr;
    int32_t id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Shape& shape() const;
    int64_t numel() const;
    bool requires_grad() const;
    std::span<const T> value() const;
    std::span<const T> grad() const;
};

#ifdef NDEBUG
inline constexpr bool kCheckFiniteDefault = false;
#else
inline constexpr bool kCheckFiniteDefault = true;
#endif

// Reverse-mode tape. Operations execute eagerly and append one entry each, so
// entry order is a topological order by construction: every input id is
// smaller than its consumer. backward() walks the tape once in reverse and
// accumulates gradients in that fixed order, which makes results bit-stable
// run to run.
template <typename T>
class Graph {
public:
    explicit Graph(bool check_finite = kCheckFiniteDefault) : check_finite_(check_finite) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor<T> leaf(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (static_cast<int64_t>(values.size()) != numel(shape))
            throw ShapeError("leaf: " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(values.size()));
        return push("leaf", std::move(shape), std::move(values), requires_grad, {});
    }

    Tensor<T> leaf(const TensorData<T>& td, bool requires_grad = false) {
        return leaf(td.shape, td.values, requires_grad);
    }

    // Borrows external storage instead of copying. The pointee must outlive
    // the graph; used to bind model parameters without a copy per step.
    Tensor<T> leaf_view(Shape shape, const T* data, bool requires_grad = false) {
        Node n;
        n.op = "leaf";
        n.shape = std::move(shape);
        n.data = data;
        n.n = numel(n.shape);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return {this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    Tensor<T> scalar(T v) { return leaf(Shape{}, {v}, false); }

    // id the next recorded node will get; ops capture it in their backward
    // closure before calling record()
    int32_t next_id() const { return static_cast<int32_t>(nodes_.size()); }

    // Appends an op result. `backward` may be empty (leaf or no-grad path);
    // callers only build the closure when some input requires grad.
    Tensor<T> record(const char* op, Shape shape, std::vector<T> value, bool requires_grad,
                     std::function<void()> backward) {
        if (static_cast<int64_t>(value.size()) != numel(shape))
            throw ShapeError(std::string(op) + ": produced " + std::to_string(value.size()) +
                             " values for shape " + shape_str(shape));
        return push(op, std::move(shape), std::move(value), requires_grad, std::move(backward));
    }

    void backward(Tensor<T> out) { backward(out, std::vector<T>(out.numel(), T(1))); }

    void backward(Tensor<T> out, std::vector<T> seed) {
        if (out.g != this) throw Error("backward: tensor belongs to a different graph");
        if (ran_backward_) throw Error("backward: already run on this graph");
        Node& terminal = node(out.id);
        if (!terminal.requires_grad)
            throw Error("backward: terminal does not depend on any requires_grad leaf");
        if (static_cast<int64_t>(seed.size()) != terminal.n)
            throw ShapeError("backward: seed size " + std::to_string(seed.size()) +
                             " does not match terminal shape " + shape_str(terminal.shape));
        ran_backward_ = true;
        for (int32_t i = 0; i <= out.id; ++i) {
            Node& nd = nodes_[i];
            if (nd.requires_grad) nd.grad.assign(nd.n, T(0));
        }
        terminal.grad = std::move(seed);
        // one visit per entry, newest first
        for (int32_t i = out.id; i >= 0; --i) {
            Node& nd = nodes_[i];
            if (nd.backward) nd.backward();
        }
    }

    std::span<const T> val(int32_t id) const {
        const Node& nd = node(id);
        return {nd.data, static_cast<size_t>(nd.n)};
    }

    // Accumulation target during backward; empty when the node takes no grad.
    std::span<T> grad_mut(int32_t id) {
        Node& nd = node(id);
        if (!nd.requires_grad || nd.grad.empty()) return {};
        return {nd.grad.data(), nd.grad.size()};
    }

    std::span<const T> grad(int32_t id) const {
        const Node& nd = node(id);
        if (!nd.requires_grad)
            throw Error(std::string("grad: node '") + nd.op + "' does not require grad");
        if (!ran_backward_) throw Error("grad: backward has not run");
        return {nd.grad.data(), nd.grad.size()};
    }

    const Shape& shape(int32_t id) const { return node(id).shape; }
    bool requires_grad(int32_t id) const { return node(id).requires_grad; }
    size_t size() const { return nodes_.size(); }
    bool check_finite() const { return check_finite_; }

private:
    struct Node {
        const char* op = "";
        Shape shape;
        std::vector<T> storage;  // empty for leaf_view
        const T* data = nullptr;
        int64_t n = 0;
        std::vector<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Tensor<T> push(const char* op, Shape shape, std::vector<T> values, bool requires_grad,
                   std::function<void()> backward) {
        Node n;
        n.op = op;
        n.shape = std::move(shape);
        n.storage = std::move(values);
        n.data = n.storage.data();
        n.n = static_cast<int64_t>(n.storage.size());
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        if (check_finite_) {
            for (int64_t i = 0; i < n.n; ++i)
                if (!std::isfinite(static_cast<double>(n.data[i])))
                    throw Error(std::string("non-finite value in output of op '") + op + "'");
        }
        nodes_.push_back(std::move(n));
        return {this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    Node& node(int32_t id) {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw Error("bad tensor handle");
        return nodes_[id];
    }
    const Node& node(int32_t id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw Error("bad tensor handle");
        return nodes_[id];
    }

    std::vector<Node> nodes_;
    bool check_finite_;
    bool ran_backward_ = false;
};

template <typename T>
const Shape& Tensor<T>::shape() const {
    return g->shape(id);
}
template <typename T>
int64_t Tensor<T>::numel() const {
    return mmic::numel(g->shape(id));
}
template <typename T>
bool Tensor<T>::requires_grad() const {
    return g->requires_grad(id);
}
template <typename T>
std::span<const T> Tensor<T>::value() const {
    return g->val(id);
}
template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return g->grad(id);
}

namespace detail {

template <typename T>
Graph<T>& same_graph(std::initializer_list<Tensor<T>> ts, const char* op) {
    Graph<T>* g = nullptr;
    for (const auto& t : ts) {
        if (!t.valid()) throw Error(std::string(op) + ": invalid tensor handle");
        if (!g) g = t.g;
        if (t.g != g) throw Error(std::string(op) + ": tensors come from different graphs");
    }
    return *g;
}

template <typename T>
bool any_rg(std::initializer_list<Tensor<T>> ts) {
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

// y += s * x, the accumulation primitive every backward rule uses
template <typename T>
inline void axpy(std::span<T> y, T s, std::span<const T> x) {
    if (y.empty()) return;
    for (size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

}  // namespace detail

}  // namespace mmic
