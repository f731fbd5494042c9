#pragma once

// Agglomerative clustering and dendrogram construction on condensed
// distance matrices.
//
// Node id convention: leaves are 0..n-1 (feature rows), internal nodes are
// n..2n-2 in merge order. A node id >= n therefore always denotes a
// multi-member cluster.

#include <string>
#include <vector>

#include "featsteer/common.hpp"
#include "featsteer/distance.hpp"

namespace featsteer {

enum class LinkCriterion { ward, average, complete };

LinkCriterion criterion_from_string(const std::string& name);
std::string to_string(LinkCriterion c);

struct Merge {
    int left = 0;
    int right = 0;
    double height = 0.0;
    int size = 0;  // members of the new cluster
};

struct Dendrogram {
    int n_leaves = 0;
    std::vector<Merge> merges;  // n_leaves - 1 records, merge k creates node n_leaves + k
};

// Global-minimum merge sequence with Lance-Williams distance updates.
// Equal merge distances break toward the lexicographically smallest
// (min node id, max node id) pair. Requires n >= 2.
Dendrogram build_dendrogram(const DistanceMatrix& d, LinkCriterion criterion);

// Partition after the first n - n_clusters merges. Labels are contiguous,
// numbered by first leaf occurrence.
std::vector<int> cut_dendrogram(const Dendrogram& tree, int n_clusters);

// The cluster path: build the hierarchy and cut it. n_clusters in [1, n].
std::vector<int> agglomerative_cluster(const DistanceMatrix& d, LinkCriterion criterion,
                                       int n_clusters);

// Leaf indices under a node, ascending. node < n_leaves is the leaf itself.
std::vector<int> leaves_under(const Dendrogram& tree, int node);

}  // namespace featsteer
