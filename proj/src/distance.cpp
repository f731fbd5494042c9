#include "featsteer/distance.hpp"

#include <cmath>

namespace featsteer {

Metric metric_from_string(const std::string& name) {
    if (name == "euclidean") return Metric::euclidean;
    if (name == "cosine") return Metric::cosine;
    throw std::invalid_argument("unknown metric '" + name + "' (expected euclidean or cosine)");
}

std::string to_string(Metric m) {
    return m == Metric::euclidean ? "euclidean" : "cosine";
}

size_t DistanceMatrix::condensed_index(int n, int i, int j) {
    return static_cast<size_t>(n) * i - static_cast<size_t>(i) * (i + 1) / 2 + (j - i - 1);
}

double DistanceMatrix::at(int i, int j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return condensed[condensed_index(n, i, j)];
}

namespace {

PairwiseResult distances_over_rows(const std::vector<const float*>& rows, int width,
                                   std::vector<int> feature_ids, int dead, Metric metric,
                                   Warnings* warnings) {
    const int n = static_cast<int>(rows.size());
    PairwiseResult result;
    result.feature_ids = std::move(feature_ids);
    result.dead_features = dead;
    result.dist.n = n;
    result.dist.condensed.resize(static_cast<size_t>(n) * (n - 1) / 2);

    std::vector<double> norms;
    if (metric == Metric::cosine) {
        norms.resize(n);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int d = 0; d < width; ++d) s += static_cast<double>(rows[i][d]) * rows[i][d];
            norms[i] = std::sqrt(s);
            if (norms[i] == 0.0)
                warn(warnings, "cosine distance: zero feature row " +
                                   std::to_string(result.feature_ids[i]) + " set to maximal dissimilarity 1");
        }
    }

    size_t k = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j, ++k) {
            if (metric == Metric::euclidean) {
                double s = 0.0;
                for (int d = 0; d < width; ++d) {
                    const double diff = static_cast<double>(rows[i][d]) - rows[j][d];
                    s += diff * diff;
                }
                result.dist.condensed[k] = std::sqrt(s);
            } else {
                if (norms[i] == 0.0 || norms[j] == 0.0) {
                    result.dist.condensed[k] = 1.0;
                    continue;
                }
                double dot = 0.0;
                for (int d = 0; d < width; ++d) dot += static_cast<double>(rows[i][d]) * rows[j][d];
                result.dist.condensed[k] = 1.0 - dot / (norms[i] * norms[j]);
            }
        }
    }
    return result;
}

}  // namespace

PairwiseResult pairwise_distances(const TransposedActivations& a, Metric metric,
                                  bool active_only, Warnings* warnings) {
    const int d_sae = a.m.rows;
    const int num = a.m.cols;
    if (num < 1) throw std::invalid_argument("pairwise_distances: empty pos set");

    std::vector<const float*> rows;
    std::vector<int> ids;
    rows.reserve(d_sae);
    ids.reserve(d_sae);
    int dead = 0;
    for (int f = 0; f < d_sae; ++f) {
        const float* row = &a.m.data[static_cast<size_t>(f) * num];
        bool any = false;
        for (int t = 0; t < num; ++t) {
            if (row[t] != 0.0f) {
                any = true;
                break;
            }
        }
        if (active_only && !any) {
            ++dead;
            continue;
        }
        rows.push_back(row);
        ids.push_back(f);
    }
    if (active_only && dead > 0)
        warn(warnings, std::to_string(dead) + " dead features excluded as one implicit cluster");

    return distances_over_rows(rows, num, std::move(ids), dead, metric, warnings);
}

PairwiseResult pairwise_distances_1d(const std::vector<double>& values, bool active_only) {
    std::vector<int> ids;
    std::vector<double> kept;
    for (int f = 0; f < static_cast<int>(values.size()); ++f) {
        if (active_only && values[f] == 0.0) continue;
        ids.push_back(f);
        kept.push_back(values[f]);
    }

    const int n = static_cast<int>(kept.size());
    PairwiseResult result;
    result.feature_ids = std::move(ids);
    result.dead_features = static_cast<int>(values.size()) - n;
    result.dist.n = n;
    result.dist.condensed.resize(static_cast<size_t>(n) * (n - 1) / 2);
    size_t k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j, ++k) result.dist.condensed[k] = std::abs(kept[i] - kept[j]);
    return result;
}

}  // namespace featsteer
