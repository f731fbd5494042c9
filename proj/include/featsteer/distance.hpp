#pragma once

// Condensed pairwise distances over SAE feature rows.

#include <string>
#include <vector>

#include "featsteer/common.hpp"
#include "featsteer/tensor_store.hpp"

namespace featsteer {

enum class Metric { euclidean, cosine };

Metric metric_from_string(const std::string& name);
std::string to_string(Metric m);

// Condensed upper-triangle distances: for i < j the pair (i, j) lives at
// n*i - i*(i+1)/2 + (j - i - 1).
struct DistanceMatrix {
    int n = 0;
    std::vector<double> condensed;

    double at(int i, int j) const;
    static size_t condensed_index(int n, int i, int j);
};

struct PairwiseResult {
    DistanceMatrix dist;
    std::vector<int> feature_ids;  // row r of dist = original feature feature_ids[r]
    int dead_features = 0;         // all-zero rows excluded when active_only is set
};

// Distances between feature rows of a d_sae x num matrix. With active_only,
// all-zero rows are excluded and reported as one implicit dead cluster.
// Cosine distance is 1 - cos; a zero row kept in the matrix gets distance 1
// to everything, with a warning.
PairwiseResult pairwise_distances(const TransposedActivations& a, Metric metric,
                                  bool active_only, Warnings* warnings = nullptr);

// 1-D variant used by the single-token approach: |v_i - v_j| over per-feature
// scalars. active_only drops zero values.
PairwiseResult pairwise_distances_1d(const std::vector<double>& values, bool active_only);

}  // namespace featsteer
