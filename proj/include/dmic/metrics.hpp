#pragma once

#include <vector>

#include "dmic/common.hpp"

namespace dmic {

inline double accuracy(const std::vector<int>& preds,
                       const std::vector<int>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw ShapeError("accuracy: length mismatch or empty");
    int hit = 0;
    for (size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<double>(hit) / preds.size();
}

// Unweighted mean of per-class F1. A class absent from both predictions
// and labels contributes F1 = 0 and is counted.
inline double macro_f1(const std::vector<int>& preds,
                       const std::vector<int>& labels, int K,
                       bool weighted = false) {
    if (preds.size() != labels.size() || preds.empty())
        throw ShapeError("macro_f1: length mismatch or empty");
    std::vector<long> tp(K, 0), fp(K, 0), fn(K, 0), support(K, 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= K || labels[i] < 0 || labels[i] >= K)
            throw ShapeError("macro_f1: class index out of range");
        support[labels[i]]++;
        if (preds[i] == labels[i])
            tp[preds[i]]++;
        else {
            fp[preds[i]]++;
            fn[labels[i]]++;
        }
    }
    double sum = 0, wsum = 0;
    for (int k = 0; k < K; ++k) {
        double denom = 2.0 * tp[k] + fp[k] + fn[k];
        double f1 = denom > 0 ? 2.0 * tp[k] / denom : 0.0;
        double wk = weighted ? static_cast<double>(support[k]) : 1.0;
        sum += wk * f1;
        wsum += wk;
    }
    return wsum > 0 ? sum / wsum : 0.0;
}

// Mean silhouette coefficient over all points, Euclidean distance.
inline double silhouette_score(const MatrixXf& points,
                               const std::vector<int>& labels, int K) {
    const int n = static_cast<int>(points.rows());
    if (n != static_cast<int>(labels.size()) || n < 2)
        throw ShapeError("silhouette: bad inputs");
    std::vector<int> count(K, 0);
    for (int l : labels) count[l]++;
    double total = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> dist_sum(K, 0);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            dist_sum[labels[j]] +=
                (points.row(i) - points.row(j)).norm();
        }
        double a = count[labels[i]] > 1
                       ? dist_sum[labels[i]] / (count[labels[i]] - 1)
                       : 0;
        double b = std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) {
            if (k == labels[i] || count[k] == 0) continue;
            b = std::min(b, dist_sum[k] / count[k]);
        }
        if (!std::isfinite(b) || count[labels[i]] <= 1) continue;
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

}  // namespace dmic
