#pragma once

// Classification metrics: overall accuracy, macro precision, macro
// one-vs-rest AUC (rank-based with tie midranks), and the confusion matrix.
// All metric arithmetic runs in double regardless of model precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mmic/core.hpp"

namespace mmic {

struct MetricsReport {
    double oa = 0.0;         // percent
    double precision = 0.0;  // percent, macro
    double auc = 0.0;        // percent, macro one-vs-rest
    std::vector<std::vector<int64_t>> confusion;  // [true_class][predicted]
    std::vector<int> zero_precision_classes;      // no predictions for class
    std::vector<int> skipped_auc_classes;         // class absent on one side
};

// Lowest index wins ties, so predictions are deterministic.
inline int argmax_index(const double* row, int k) {
    int best = 0;
    for (int i = 1; i < k; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

// Stable softmax of one logit row.
inline std::vector<double> softmax_row(const double* row, int k) {
    double m = row[0];
    for (int i = 1; i < k; ++i) m = std::max(m, row[i]);
    std::vector<double> p(static_cast<size_t>(k));
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
        p[static_cast<size_t>(i)] = std::exp(row[i] - m);
        z += p[static_cast<size_t>(i)];
    }
    for (int i = 0; i < k; ++i) p[static_cast<size_t>(i)] /= z;
    return p;
}

// Mann-Whitney AUC of scores against binary membership; tied scores receive
// their midrank, which credits tied positive/negative pairs half each.
inline double auc_ovr(const std::vector<double>& scores, const std::vector<char>& positive) {
    check(scores.size() == positive.size(), "auc: scores/labels size mismatch");
    const size_t n = scores.size();
    int64_t pos = 0;
    for (char c : positive) pos += c ? 1 : 0;
    const int64_t neg = static_cast<int64_t>(n) - pos;
    check(pos > 0 && neg > 0, "auc: needs both positives and negatives");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        // 1-based ranks i+1 .. j+1 share the midrank
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t t = i; t <= j; ++t)
            if (positive[order[t]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1.0);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

template <typename T>
MetricsReport compute_metrics(const TensorData<T>& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2)
        throw ShapeError("metrics: logits must be BxK, got " + shape_str(logits.shape));
    const int b = logits.shape[0], k = logits.shape[1];
    check(b >= 1, "metrics: need at least one sample");
    check(static_cast<int>(labels.size()) == b, "metrics: label count mismatch");
    for (int lab : labels)
        check(lab >= 0 && lab < k, "metrics: label out of range");

    std::vector<double> rows(static_cast<size_t>(b) * k);
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<double>(logits.values[i]);

    MetricsReport rep;
    rep.confusion.assign(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k), 0));
    int64_t correct = 0;
    for (int i = 0; i < b; ++i) {
        const int pred = argmax_index(rows.data() + static_cast<int64_t>(i) * k, k);
        rep.confusion[static_cast<size_t>(labels[static_cast<size_t>(i)])]
                     [static_cast<size_t>(pred)]++;
        if (pred == labels[static_cast<size_t>(i)]) ++correct;
    }
    rep.oa = 100.0 * static_cast<double>(correct) / b;

    double prec_sum = 0.0;
    for (int c = 0; c < k; ++c) {
        int64_t tp = rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
        int64_t predicted = 0;
        for (int t = 0; t < k; ++t) predicted += rep.confusion[static_cast<size_t>(t)][static_cast<size_t>(c)];
        if (predicted == 0) {
            rep.zero_precision_classes.push_back(c);  // scored 0
        } else {
            prec_sum += static_cast<double>(tp) / static_cast<double>(predicted);
        }
    }
    rep.precision = 100.0 * prec_sum / k;

    std::vector<std::vector<double>> probs(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i)
        probs[static_cast<size_t>(i)] = softmax_row(rows.data() + static_cast<int64_t>(i) * k, k);
    double auc_sum = 0.0;
    int auc_classes = 0;
    for (int c = 0; c < k; ++c) {
        int64_t pos = 0;
        for (int lab : labels) pos += lab == c ? 1 : 0;
        if (pos == 0 || pos == b) {
            rep.skipped_auc_classes.push_back(c);
            continue;
        }
        std::vector<double> sc(static_cast<size_t>(b));
        std::vector<char> is_pos(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            sc[static_cast<size_t>(i)] = probs[static_cast<size_t>(i)][static_cast<size_t>(c)];
            is_pos[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == c ? 1 : 0;
        }
        auc_sum += auc_ovr(sc, is_pos);
        ++auc_classes;
    }
    rep.auc = auc_classes > 0 ? 100.0 * auc_sum / auc_classes : 0.0;
    return rep;
}

}  // namespace mmic
