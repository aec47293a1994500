#pragma once

#include <algorithm>

#include "mmic/ops.hpp"

namespace mmic {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // 0 checks every element; otherwise a seeded random subset per leaf, which
    // is how whole-model checks stay tractable
    int max_elements_per_leaf = 0;
    uint64_t subset_seed = 1;
    // Combine central differences at step and step/2 to cancel the O(h^2)
    // truncation term. Twice the evaluations, but deep compositions with
    // large third derivatives need the extra resolution near tolerance.
    bool richardson = false;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int64_t elements_checked = 0;
    int worst_leaf = -1;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool pass = false;
};

// Central-difference check of the tape gradients. `build` maps (graph, leaves)
// to a scalar output and is re-invoked on perturbed copies of the leaf data,
// so it must be a pure function of the leaf values.
template <typename T, typename BuildFn>
GradCheckReport grad_check(BuildFn&& build, std::vector<TensorData<T>> leaves,
                           GradCheckOptions opt = {}) {
    auto run = [&](const std::vector<TensorData<T>>& vals, bool want_grads,
                   std::vector<std::vector<T>>* grads_out) -> double {
        Graph<T> g;
        std::vector<Tensor<T>> ts;
        ts.reserve(vals.size());
        for (const auto& v : vals) ts.push_back(g.leaf(v, want_grads));
        Tensor<T> out = build(g, ts);
        if (out.numel() != 1)
            throw ShapeError("grad_check: build must produce a scalar, got " +
                             shape_str(out.shape()));
        double y = static_cast<double>(out.value()[0]);
        if (want_grads) {
            g.backward(out);
            grads_out->clear();
            for (auto& t : ts) {
                auto gsp = t.grad();
                grads_out->emplace_back(gsp.begin(), gsp.end());
            }
        }
        return y;
    };

    std::vector<std::vector<T>> analytic;
    run(leaves, true, &analytic);

    GradCheckReport rep;
    const double h = opt.step;
    Rng rng(opt.subset_seed);
    for (size_t li = 0; li < leaves.size(); ++li) {
        const int64_t n = leaves[li].size();
        std::vector<int64_t> idx(n);
        std::iota(idx.begin(), idx.end(), int64_t(0));
        if (opt.max_elements_per_leaf > 0 && n > opt.max_elements_per_leaf) {
            rng.shuffle(idx);
            idx.resize(opt.max_elements_per_leaf);
            std::sort(idx.begin(), idx.end());
        }
        for (int64_t i : idx) {
            const T saved = leaves[li].values[i];
            auto central = [&](double hh) {
                leaves[li].values[i] = saved + static_cast<T>(hh);
                double fp = run(leaves, false, nullptr);
                leaves[li].values[i] = saved - static_cast<T>(hh);
                double fm = run(leaves, false, nullptr);
                return (fp - fm) / (2.0 * hh);
            };
            double numeric = central(h);
            if (opt.richardson) numeric = (4.0 * central(h / 2.0) - numeric) / 3.0;
            leaves[li].values[i] = saved;
            double a = static_cast<double>(analytic[li][i]);
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            double rel = std::abs(a - numeric) / denom;
            ++rep.elements_checked;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_leaf = static_cast<int>(li);
                rep.worst_index = i;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
    }
    rep.pass = rep.max_rel_error <= opt.tolerance;
    return rep;
}

}  // namespace mmic
