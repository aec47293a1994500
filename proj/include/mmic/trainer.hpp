#pragma once

// Adam training loop with linear warmup + cosine learning-rate decay, early
// stopping on validation accuracy, and per-epoch history. Gradients for a
// batch may be computed by several workers, but the reduction always runs in
// item order so results do not depend on MMIC_THREADS.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmic/core.hpp"
#include "mmic/data.hpp"
#include "mmic/graph.hpp"
#include "mmic/metrics.hpp"
#include "mmic/ops.hpp"
#include "mmic/params.hpp"

namespace mmic {

// ---- loss -----------------------------------------------------------------

// Cross entropy of one logit vector against an integer label, fused with a
// stable log-sum-exp softmax: loss = logsumexp(x) - x[label]. Backward is
// softmax(x) minus the one-hot target.
template <typename T>
Tensor<T> softmax_cross_entropy(Tensor<T> logits, int label) {
    Graph<T>& g = detail::same_graph<T>({logits}, "softmax_xent");
    auto xv = logits.value();
    const int k = static_cast<int>(xv.size());
    check(k >= 2, "softmax_xent: needs at least two logits");
    check(label >= 0 && label < k, "softmax_xent: label " + std::to_string(label) +
                                       " out of range for " + std::to_string(k) + " classes");
    T m = xv[0];
    for (int i = 1; i < k; ++i) m = std::max(m, xv[i]);
    T z = T(0);
    for (int i = 0; i < k; ++i) z += std::exp(xv[i] - m);
    T loss = m + std::log(z) - xv[static_cast<size_t>(label)];

    bool rg = logits.requires_grad();
    std::function<void()> bw;
    if (rg) {
        int32_t oi = g.next_id();
        bw = [gp = &g, xi = logits.id, oi, label, k, m, z] {
            T go = gp->grad(oi)[0];
            auto xval = gp->val(xi);
            auto gx = gp->grad_mut(xi);
            for (int i = 0; i < k; ++i) {
                T p = std::exp(xval[static_cast<size_t>(i)] - m) / z;
                T target = i == label ? T(1) : T(0);
                gx[static_cast<size_t>(i)] += go * (p - target);
            }
        };
    }
    return g.record("softmax_xent", Shape{}, {loss}, rg, std::move(bw));
}

// ---- schedule -------------------------------------------------------------

struct TrainSchedule {
    int total_epochs = 200;
    int warmup_epochs = 10;
    int early_stop_patience = 20;
    int batch_size = 16;
    double base_lr = 1e-4;
    double min_lr = 1e-6;  // base_lr / 100
    uint64_t seed = 42;
};

inline void validate_schedule(const TrainSchedule& s) {
    if (s.total_epochs < 1) throw ConfigError("schedule: total_epochs must be >= 1");
    if (s.warmup_epochs < 0) throw ConfigError("schedule: warmup_epochs must be >= 0");
    if (s.warmup_epochs >= s.total_epochs)
        throw ConfigError("schedule: warmup_epochs must be < total_epochs");
    if (s.early_stop_patience < 1) throw ConfigError("schedule: patience must be >= 1");
    if (s.batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
    if (!(s.base_lr > 0.0)) throw ConfigError("schedule: base_lr must be > 0");
    if (s.min_lr < 0.0 || s.min_lr > s.base_lr)
        throw ConfigError("schedule: min_lr must be in [0, base_lr]");
}

// Linear ramp over the warmup epochs, then cosine decay to min_lr. Epochs are
// 0-based; epoch == total_epochs is allowed so the decay endpoint is
// inspectable.
inline double lr_at(int epoch, const TrainSchedule& s) {
    validate_schedule(s);
    check(epoch >= 0 && epoch <= s.total_epochs, "lr_at: epoch out of range");
    if (epoch < s.warmup_epochs)
        return s.base_lr * static_cast<double>(epoch + 1) / s.warmup_epochs;
    const double t = epoch - s.warmup_epochs;
    const double span = s.total_epochs - s.warmup_epochs;
    return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * t / span));
}

// ---- optimizer ------------------------------------------------------------

template <typename T>
struct OptimState {
    std::unordered_map<std::string, std::vector<T>> m, v;  // keyed by parameter name
    int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double base_lr = 1e-4;
    double weight_decay = 1e-4;
};

// One bias-corrected Adam step over every parameter that has a gradient.
// Weight decay is decoupled and applied before the moment update. Parameters
// are visited in store registration order, so updates are bit-deterministic.
template <typename T>
void adam_step(ParamStore<T>& store, const std::unordered_map<std::string, std::vector<T>>& grads,
               OptimState<T>& st, double lr) {
    ++st.step;
    const T bc1 = T(1) - static_cast<T>(std::pow(st.beta1, static_cast<double>(st.step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(st.beta2, static_cast<double>(st.step)));
    const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
    const T lrT = static_cast<T>(lr), wd = static_cast<T>(st.weight_decay);
    const T eps = static_cast<T>(st.eps);
    for (const auto& name : store.names()) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const std::vector<T>& g = it->second;
        auto& p = store.entry(name).values;
        check(g.size() == p.size(), "adam_step: gradient size mismatch for '" + name + "'");
        for (T gv : g)
            if (!std::isfinite(static_cast<double>(gv)))
                throw Error("adam_step: non-finite gradient in parameter '" + name + "'");
        auto& m = st.m[name];
        auto& v = st.v[name];
        if (m.empty()) m.assign(p.size(), T(0));
        if (v.empty()) v.assign(p.size(), T(0));
        check(m.size() == p.size() && v.size() == p.size(),
              "adam_step: moment size mismatch for '" + name + "'");
        for (size_t i = 0; i < p.size(); ++i) {
            if (wd != T(0)) p[i] -= lrT * wd * p[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            p[i] -= lrT * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---- early stopping -------------------------------------------------------

// Tracks the best validation metric; epochs inside the warmup window never
// count toward patience. observe() returns true when training should stop.
struct EarlyStopTracker {
    int patience = 20;
    int warmup_epochs = 0;
    double best = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int stale = 0;

    bool observe(int epoch, double metric) {
        if (metric > best) {
            best = metric;
            best_epoch = epoch;
            stale = 0;
            return false;
        }
        if (epoch < warmup_epochs) return false;
        ++stale;
        return stale >= patience;
    }
};

// ---- evaluation -----------------------------------------------------------

template <typename T>
struct EvalResult {
    MetricsReport metrics;
    double mean_loss = 0.0;
    TensorData<T> logits;     // B x K
    std::vector<int> labels;  // record order of the split
};

// Runs the model over one split without gradients and scores the logits.
template <typename T, typename Fwd>
EvalResult<T> evaluate_split(ParamStore<T>& store, const Dataset& ds, Split split, Fwd&& forward) {
    const std::vector<int> ids = split_members(ds.index, split);
    check(!ids.empty(), std::string("evaluate: split '") + split_name(split) + "' is empty");
    EvalResult<T> r;
    double loss_sum = 0.0;
    for (size_t row = 0; row < ids.size(); ++row) {
        Graph<T> g(false);
        ParamCtx<T> P(store, g, /*trainable=*/false);
        Tensor<T> x = g.leaf(record_image<T>(ds, ids[row]), false);
        Tensor<T> out = forward(P, x);
        const int label = ds.index.labels[static_cast<size_t>(ids[row])];
        loss_sum += static_cast<double>(softmax_cross_entropy(out, label).value()[0]);
        auto ov = out.value();
        if (row == 0)
            r.logits = TensorData<T>(Shape{static_cast<int>(ids.size()), static_cast<int>(ov.size())});
        check(static_cast<int>(ov.size()) == r.logits.shape[1], "evaluate: logit width changed");
        std::copy(ov.begin(), ov.end(),
                  r.logits.values.begin() + static_cast<int64_t>(row) * r.logits.shape[1]);
        r.labels.push_back(label);
    }
    r.mean_loss = loss_sum / static_cast<double>(ids.size());
    r.metrics = compute_metrics(r.logits, r.labels);
    return r;
}

// ---- training loop --------------------------------------------------------

struct EpochStat {
    int epoch = 0;  // 0-based everywhere, including emitted files
    double lr = 0.0;
    double train_loss = 0.0;
    double val_oa = 0.0;
    double val_pre = 0.0;
    double val_auc = 0.0;
};

template <typename T>
struct TrainResult {
    std::vector<EpochStat> history;
    int best_epoch = -1;
    double best_val_oa = -std::numeric_limits<double>::infinity();
    std::unordered_map<std::string, TensorData<T>> best_params;
    bool stopped_early = false;
    bool stop_requested = false;  // on_epoch hook asked to stop
};

namespace detail {

// Forward+backward for one training item; returns the loss and leaves the
// per-parameter gradients of this item in `out` (bound order).
template <typename T, typename Fwd>
double train_item(ParamStore<T>& store, const Dataset& ds, int id, Fwd&& forward,
                  std::vector<std::pair<std::string, std::vector<T>>>& out) {
    Graph<T> g(false);
    ParamCtx<T> P(store, g, /*trainable=*/true);
    Tensor<T> x = g.leaf(record_image<T>(ds, id), false);
    Tensor<T> logits = forward(P, x);
    Tensor<T> loss = softmax_cross_entropy(logits, ds.index.labels[static_cast<size_t>(id)]);
    const double lv = static_cast<double>(loss.value()[0]);
    g.backward(loss);
    out.clear();
    out.reserve(P.bound().size());
    for (const auto& bp : P.bound()) {
        auto gv = bp.tensor.grad();
        out.emplace_back(bp.name, std::vector<T>(gv.begin(), gv.end()));
    }
    return lv;
}

}  // namespace detail

// Minimizes mean cross entropy on the train split, evaluates the val split
// each epoch, and keeps the parameters of the best val-OA epoch. `forward`
// maps (ParamCtx, image tensor) to logits. The optional hook sees every
// finished epoch and may return true to request a graceful stop (used for
// Ctrl-C handling and target-accuracy exits).
template <typename T, typename Fwd>
TrainResult<T> train_loop(ParamStore<T>& store, const Dataset& ds, const TrainSchedule& sched,
                          OptimState<T>& opt, Fwd&& forward,
                          const std::function<bool(const EpochStat&)>& on_epoch = {}) {
    validate_schedule(sched);
    check(!ds.index.split.empty(), "train: dataset has no split assignment");
    check(!split_members(ds.index, Split::train).empty(), "train: train split is empty");
    check(!split_members(ds.index, Split::val).empty(), "train: val split is empty");

    // Materialize every parameter before any parallel section so the store is
    // read-only while a batch is in flight.
    {
        Graph<T> g(false);
        ParamCtx<T> P(store, g, /*trainable=*/false);
        Tensor<T> x = g.leaf(record_image<T>(ds, split_members(ds.index, Split::train)[0]), false);
        (void)forward(P, x);
    }

    TrainResult<T> result;
    EarlyStopTracker stopper{sched.early_stop_patience, sched.warmup_epochs};
    const int workers = worker_threads();

    for (int epoch = 0; epoch < sched.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, sched);
        const auto batches = make_batches(ds.index, Split::train, sched.batch_size,
                                          sched.seed, epoch);
        double loss_sum = 0.0;
        int64_t items_seen = 0;
        for (const auto& ids : batches) {
            const int n = static_cast<int>(ids.size());
            std::vector<std::vector<std::pair<std::string, std::vector<T>>>> per_item(
                static_cast<size_t>(n));
            std::vector<double> item_loss(static_cast<size_t>(n), 0.0);
            if (workers <= 1 || n == 1) {
                for (int i = 0; i < n; ++i)
                    item_loss[static_cast<size_t>(i)] = detail::train_item(
                        store, ds, ids[static_cast<size_t>(i)], forward,
                        per_item[static_cast<size_t>(i)]);
            } else {
                std::vector<std::thread> pool;
                const int nw = std::min(workers, n);
                for (int w = 0; w < nw; ++w)
                    pool.emplace_back([&, w] {
                        for (int i = w; i < n; i += nw)
                            item_loss[static_cast<size_t>(i)] = detail::train_item(
                                store, ds, ids[static_cast<size_t>(i)], forward,
                                per_item[static_cast<size_t>(i)]);
                    });
                for (auto& th : pool) th.join();
            }
            // Fixed-order reduction: identical bits for any worker count.
            std::unordered_map<std::string, std::vector<T>> acc;
            for (int i = 0; i < n; ++i) {
                const double lv = item_loss[static_cast<size_t>(i)];
                if (!std::isfinite(lv))
                    throw Error("train: loss diverged (non-finite) at epoch " +
                                std::to_string(epoch));
                loss_sum += lv;
                for (auto& [name, gv] : per_item[static_cast<size_t>(i)]) {
                    auto& slot = acc[name];
                    if (slot.empty()) {
                        slot = std::move(gv);
                    } else {
                        for (size_t e = 0; e < slot.size(); ++e) slot[e] += gv[e];
                    }
                }
            }
            const T inv = T(1) / static_cast<T>(n);
            for (auto& [name, gv] : acc)
                for (T& e : gv) e *= inv;
            adam_step(store, acc, opt, lr);
            items_seen += n;
        }

        auto val = evaluate_split(store, ds, Split::val, forward);
        EpochStat stat;
        stat.epoch = epoch;
        stat.lr = lr;
        stat.train_loss = loss_sum / static_cast<double>(items_seen);
        stat.val_oa = val.metrics.oa;
        stat.val_pre = val.metrics.precision;
        stat.val_auc = val.metrics.auc;
        result.history.push_back(stat);

        const bool had_best = stat.val_oa > stopper.best;
        const bool stop_now = stopper.observe(epoch, stat.val_oa);
        if (had_best) {
            result.best_epoch = epoch;
            result.best_val_oa = stat.val_oa;
            result.best_params.clear();
            for (const auto& name : store.names())
                result.best_params.emplace(name, store.entry(name));
        }
        if (on_epoch && on_epoch(stat)) {
            result.stop_requested = true;
            break;
        }
        if (stop_now) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

// Loads a best-params snapshot back into the store.
template <typename T>
void restore_params(ParamStore<T>& store,
                    const std::unordered_map<std::string, TensorData<T>>& snapshot) {
    for (const auto& [name, data] : snapshot) store.assign(name, data);
}

// ---- history emitters -----------------------------------------------------

inline std::string history_lines(const std::vector<EpochStat>& h) {
    std::string out = "# epoch lr train_loss val_oa val_pre val_auc\n";
    char buf[160];
    for (const auto& s : h) {
        std::snprintf(buf, sizeof buf, "%d %.8e %.8f %.4f %.4f %.4f\n", s.epoch, s.lr,
                      s.train_loss, s.val_oa, s.val_pre, s.val_auc);
        out += buf;
    }
    return out;
}

inline std::string history_table(const std::vector<EpochStat>& h) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%5s  %10s  %10s  %7s  %7s  %7s\n", "epoch", "lr",
                  "train_loss", "val_OA", "val_Pre", "val_AUC");
    out += buf;
    for (const auto& s : h) {
        std::snprintf(buf, sizeof buf, "%5d  %10.3e  %10.6f  %7.2f  %7.2f  %7.2f\n", s.epoch,
                      s.lr, s.train_loss, s.val_oa, s.val_pre, s.val_auc);
        out += buf;
    }
    return out;
}

}  // namespace mmic
