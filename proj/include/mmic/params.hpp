#pragma once

// Named parameter storage and graph binding.
//
// A ParamStore owns every learnable tensor of a model, keyed by a
// dotted-path name ("stage0.block1.rev2.w_in"). Builders call
// ParamCtx::operator() while assembling a forward graph: the first build
// creates and initializes the entry, later builds just bind the stored
// values into the new graph as borrowed leaves. Initialization is keyed by
// (store seed, parameter name), so it does not depend on build order.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmic/core.hpp"
#include "mmic/graph.hpp"

namespace mmic {

namespace init {

// FNV-1a, used only to derive per-parameter rng streams from names.
inline uint64_t name_hash(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
using Fn = std::function<void(std::span<T>, const Shape&, Rng&)>;

// U(-1/sqrt(fan_in), +1/sqrt(fan_in)), the usual fan-in-scaled uniform.
template <typename T>
Fn<T> kaiming(int fan_in) {
    check(fan_in >= 1, "init::kaiming: fan_in must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return [bound](std::span<T> v, const Shape&, Rng& rng) {
        for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
    };
}

template <typename T>
Fn<T> constant(double c) {
    return [c](std::span<T> v, const Shape&, Rng&) {
        for (auto& e : v) e = static_cast<T>(c);
    };
}

template <typename T>
Fn<T> zeros() {
    return constant<T>(0.0);
}

template <typename T>
Fn<T> ones() {
    return constant<T>(1.0);
}

// State-decay spectrum: a_log[d][n] = log(n + 1), so A = -exp(a_log) realizes
// -1..-N per state index for every channel.
template <typename T>
Fn<T> a_log_spectrum() {
    return [](std::span<T> v, const Shape& s, Rng&) {
        check(s.size() == 2, "init::a_log_spectrum: expected rank-2 shape");
        const int N = s[1];
        for (int d = 0; d < s[0]; ++d)
            for (int n = 0; n < N; ++n)
                v[static_cast<size_t>(d) * N + n] = static_cast<T>(std::log(n + 1.0));
    };
}

// Bias b with softplus(b) = dt for dt ~ U(dt_min, dt_max): b = log(e^dt - 1).
template <typename T>
Fn<T> delta_bias(double dt_min = 0.001, double dt_max = 0.1) {
    return [dt_min, dt_max](std::span<T> v, const Shape&, Rng& rng) {
        for (auto& e : v) {
            double dt = rng.uniform(dt_min, dt_max);
            e = static_cast<T>(std::log(std::expm1(dt)));
        }
    };
}

}  // namespace init

template <typename T>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed = 42) : seed_(seed) {}

    uint64_t seed() const { return seed_; }
    size_t count() const { return order_.size(); }
    const std::vector<std::string>& names() const { return order_; }
    bool has(const std::string& name) const { return map_.count(name) != 0; }

    TensorData<T>& entry(const std::string& name) {
        auto it = map_.find(name);
        check(it != map_.end(), "ParamStore: no parameter named '" + name + "'");
        return it->second;
    }
    const TensorData<T>& entry(const std::string& name) const {
        auto it = map_.find(name);
        check(it != map_.end(), "ParamStore: no parameter named '" + name + "'");
        return it->second;
    }

    // Creates and initializes a new entry. The rng stream is derived from the
    // store seed and the name alone.
    TensorData<T>& create(const std::string& name, Shape shape, const init::Fn<T>& fn) {
        check(!has(name), "ParamStore: duplicate parameter '" + name + "'");
        TensorData<T> t(shape);
        uint64_t stream = seed_ ^ init::name_hash(name);
        Rng rng(splitmix64(stream));
        fn(std::span<T>(t.values), shape, rng);
        order_.push_back(name);
        return map_.emplace(name, std::move(t)).first->second;
    }

    // Replaces values of an existing entry (checkpoint load); shape must match.
    void assign(const std::string& name, const TensorData<T>& data) {
        auto& e = entry(name);
        if (e.shape != data.shape)
            throw ShapeError("ParamStore: assign to '" + name + "' with shape " +
                             shape_str(data.shape) + ", stored " + shape_str(e.shape));
        e.values = data.values;
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& name : order_) n += map_.at(name).size();
        return n;
    }

private:
    uint64_t seed_;
    std::vector<std::string> order_;
    std::unordered_map<std::string, TensorData<T>> map_;  // node-stable storage
};

// One bound parameter inside a particular graph.
template <typename T>
struct BoundParam {
    std::string name;
    Tensor<T> tensor;
};

// Create-or-bind front end used by model builders. Operator() returns the
// graph leaf for a named parameter, creating it in the store on first use.
template <typename T>
class ParamCtx {
public:
    ParamCtx(ParamStore<T>& store, Graph<T>& g, bool trainable = true)
        : store_(store), g_(g), trainable_(trainable) {}

    Tensor<T> operator()(const std::string& name, Shape shape, const init::Fn<T>& fn) {
        TensorData<T>* e;
        if (store_.has(name)) {
            e = &store_.entry(name);
            if (e->shape != shape)
                throw ShapeError("ParamCtx: '" + name + "' bound with shape " +
                                 shape_str(shape) + ", stored " + shape_str(e->shape));
        } else {
            e = &store_.create(name, shape, fn);
        }
        Tensor<T> t = g_.leaf_view(e->shape, e->values.data(), trainable_);
        bound_.push_back({name, t});
        return t;
    }

    Graph<T>& graph() { return g_; }
    const std::vector<BoundParam<T>>& bound() const { return bound_; }

private:
    ParamStore<T>& store_;
    Graph<T>& g_;
    bool trainable_;
    std::vector<BoundParam<T>> bound_;
};

}  // namespace mmic
