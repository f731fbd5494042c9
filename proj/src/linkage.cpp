#include "featsteer/linkage.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace featsteer {

LinkCriterion criterion_from_string(const std::string& name) {
    if (name == "ward") return LinkCriterion::ward;
    if (name == "average") return LinkCriterion::average;
    if (name == "complete") return LinkCriterion::complete;
    throw std::invalid_argument("unknown linkage criterion '" + name +
                                "' (expected ward, average, or complete)");
}

std::string to_string(LinkCriterion c) {
    switch (c) {
        case LinkCriterion::ward: return "ward";
        case LinkCriterion::average: return "average";
        default: return "complete";
    }
}

namespace {

// A merge candidate: distance first, then the lexicographically smallest
// (min node id, max node id) pair wins ties.
struct Candidate {
    double dist = std::numeric_limits<double>::infinity();
    int lo_node = -1;
    int hi_node = -1;
    int partner_slot = -1;

    bool better_than(const Candidate& o) const {
        if (dist != o.dist) return dist < o.dist;
        if (lo_node != o.lo_node) return lo_node < o.lo_node;
        return hi_node < o.hi_node;
    }
};

Candidate make_candidate(double dist, int node_a, int node_b, int partner_slot) {
    Candidate c;
    c.dist = dist;
    c.lo_node = std::min(node_a, node_b);
    c.hi_node = std::max(node_a, node_b);
    c.partner_slot = partner_slot;
    return c;
}

}  // namespace

Dendrogram build_dendrogram(const DistanceMatrix& d, LinkCriterion criterion) {
    const int n = d.n;
    if (n < 2) throw std::invalid_argument("build_dendrogram: need at least 2 items");

    // Working copy of the condensed matrix; Ward's update runs on squared
    // distances, reporting sqrt as the merge height.
    std::vector<double> w = d.condensed;
    if (criterion == LinkCriterion::ward)
        for (double& v : w) v *= v;
    auto W = [&](int i, int j) -> double& { return w[DistanceMatrix::condensed_index(n, i, j)]; };

    std::vector<int> node_of(n), size_of(n, 1), succ(n + 1), pred(n + 1);
    for (int i = 0; i < n; ++i) {
        node_of[i] = i;
        succ[i] = i + 1;
        pred[i + 1] = i;
    }
    int first_slot = 0;
    auto remove_slot = [&](int s) {
        if (s == first_slot) {
            first_slot = succ[s];
        } else {
            succ[pred[s]] = succ[s];
            pred[succ[s]] = pred[s];
        }
    };

    // Per-slot cache of the best partner among higher slots. Kept eagerly
    // valid so the global pick is identical to a full pair scan, tie-break
    // included.
    std::vector<Candidate> best(n);
    auto recompute_row = [&](int i) {
        Candidate c;
        for (int j = succ[i]; j < n; j = succ[j]) {
            const Candidate cand = make_candidate(W(i, j), node_of[i], node_of[j], j);
            if (cand.better_than(c)) c = cand;
        }
        best[i] = c;
    };
    for (int i = first_slot; i < n; i = succ[i]) recompute_row(i);

    Dendrogram tree;
    tree.n_leaves = n;
    tree.merges.reserve(n - 1);

    for (int step = 0; step < n - 1; ++step) {
        int slot_i = -1;
        for (int i = first_slot; i < n; i = succ[i]) {
            if (slot_i < 0 || best[i].better_than(best[slot_i])) slot_i = i;
        }
        const int slot_j = best[slot_i].partner_slot;
        const double merged_dist = best[slot_i].dist;
        const double height = criterion == LinkCriterion::ward ? std::sqrt(merged_dist) : merged_dist;

        Merge merge;
        merge.left = node_of[slot_i];
        merge.right = node_of[slot_j];
        merge.height = height;
        merge.size = size_of[slot_i] + size_of[slot_j];
        tree.merges.push_back(merge);

        const double si = size_of[slot_i];
        const double sj = size_of[slot_j];
        remove_slot(slot_j);

        for (int x = first_slot; x < n; x = succ[x]) {
            if (x == slot_i) continue;
            const double dxi = W(std::min(x, slot_i), std::max(x, slot_i));
            const double dxj = W(std::min(x, slot_j), std::max(x, slot_j));
            double updated;
            switch (criterion) {
                case LinkCriterion::complete:
                    updated = std::max(dxi, dxj);
                    break;
                case LinkCriterion::average:
                    updated = (si * dxi + sj * dxj) / (si + sj);
                    break;
                case LinkCriterion::ward: {
                    const double sx = size_of[x];
                    updated = ((si + sx) * dxi + (sj + sx) * dxj - sx * merged_dist) / (si + sj + sx);
                    break;
                }
            }
            W(std::min(x, slot_i), std::max(x, slot_i)) = updated;
        }

        node_of[slot_i] = n + step;
        size_of[slot_i] += size_of[slot_j];

        // Row caches referring to a merged slot are stale; rows below slot_i
        // also see one changed distance, which can only improve their best.
        recompute_row(slot_i);
        for (int x = first_slot; x < slot_i; x = succ[x]) {
            if (best[x].partner_slot == slot_i || best[x].partner_slot == slot_j) {
                recompute_row(x);
            } else {
                const Candidate cand = make_candidate(W(x, slot_i), node_of[x], node_of[slot_i], slot_i);
                if (cand.better_than(best[x])) best[x] = cand;
            }
        }
        for (int x = succ[slot_i]; x < slot_j; x = succ[x]) {
            if (best[x].partner_slot == slot_j) recompute_row(x);
        }
    }
    return tree;
}

std::vector<int> cut_dendrogram(const Dendrogram& tree, int n_clusters) {
    const int n = tree.n_leaves;
    if (n_clusters < 1 || n_clusters > n)
        throw std::invalid_argument("n_clusters must be in [1, n]");

    // Union-find over the first n - n_clusters merges. parent[] spans all
    // 2n-1 node ids; each merge roots its children at the new node.
    std::vector<int> parent(2 * n - 1);
    for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (int k = 0; k < n - n_clusters; ++k) {
        const int node = n + k;
        parent[find(tree.merges[k].left)] = node;
        parent[find(tree.merges[k].right)] = node;
    }

    std::vector<int> labels(n, -1);
    std::vector<int> label_of_root(2 * n - 1, -1);
    int next = 0;
    for (int leaf = 0; leaf < n; ++leaf) {
        const int root = find(leaf);
        if (label_of_root[root] < 0) label_of_root[root] = next++;
        labels[leaf] = label_of_root[root];
    }
    return labels;
}

std::vector<int> agglomerative_cluster(const DistanceMatrix& d, LinkCriterion criterion,
                                       int n_clusters) {
    if (d.n == 0) return {};
    if (n_clusters < 1 || n_clusters > d.n)
        throw std::invalid_argument("n_clusters must be in [1, n]");
    if (d.n == 1) return {0};
    return cut_dendrogram(build_dendrogram(d, criterion), n_clusters);
}

std::vector<int> leaves_under(const Dendrogram& tree, int node) {
    const int n = tree.n_leaves;
    std::vector<int> leaves;
    std::vector<int> stack = {node};
    while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        if (cur < n) {
            leaves.push_back(cur);
        } else {
            const Merge& m = tree.merges[cur - n];
            stack.push_back(m.left);
            stack.push_back(m.right);
        }
    }
    std::sort(leaves.begin(), leaves.end());
    return leaves;
}

}  // namespace featsteer
