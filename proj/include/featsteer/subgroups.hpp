#pragma once

// Anchor feature sets and the three subgroup strategies that feed steering:
// shared-cluster membership, bounded dendrogram ascent, and single-token
// 1-D linkage.

#include <filesystem>
#include <string>
#include <vector>

#include "featsteer/common.hpp"
#include "featsteer/linkage.hpp"
#include "featsteer/tensor_store.hpp"

namespace featsteer {

enum class AnchorSource { pos_argmax, token_topk };

enum class GroupMethod { cluster, linkage, single_token };

GroupMethod method_from_string(const std::string& name);
std::string to_string(GroupMethod m);

struct AnchorFeatureSet {
    std::vector<int> features;  // duplicates removed, first occurrence kept
    AnchorSource source = AnchorSource::pos_argmax;
};

struct FeatureSubgroup {
    int layer = 0;
    int anchor = 0;
    std::vector<int> members;  // ascending, always contains anchor
    GroupMethod method = GroupMethod::cluster;
};

struct SteeringSelection {
    int layer = 0;
    GroupMethod method = GroupMethod::cluster;
    int anchor = 0;
    std::vector<int> chosen;    // <= k features, mean-activation descending
    std::vector<double> means;  // mean activation of each chosen feature
};

// Per-pos-token argmax features at the alignment layer (ties to the lowest
// index). All-zero rows contribute nothing, with a warning.
AnchorFeatureSet anchor_features_from_pos(const LayerActivations& acts, Warnings* warnings = nullptr);

// Top-k features on one token's row; fewer than k nonzero entries return
// only the nonzero ones.
AnchorFeatureSet anchor_features_on_token(const LayerActivations& acts, int token, int k = 2,
                                          Warnings* warnings = nullptr);

// labels/feature_ids come from agglomerative_cluster over the active rows;
// an anchor that was excluded as dead yields the singleton {anchor}.
FeatureSubgroup subgroup_by_cluster(const std::vector<int>& labels, const std::vector<int>& feature_ids,
                                    int anchor, int layer, Warnings* warnings = nullptr);

// Ascend from the anchor leaf and return the leaf set of the highest
// ancestor whose size stays within max_size. feature_ids maps tree leaves
// back to original feature indices; an anchor missing from the tree yields
// the singleton {anchor}.
FeatureSubgroup subgroup_by_linkage(const Dendrogram& tree, const std::vector<int>& feature_ids,
                                    int anchor, int layer, int max_size = 50);

// 1-D linkage over per-feature activations on a single token, then the
// bounded ascent above.
FeatureSubgroup subgroup_single_token(const LayerActivations& acts, int token, int anchor,
                                      int max_size = 50,
                                      LinkCriterion criterion = LinkCriterion::average,
                                      bool active_only = true, Warnings* warnings = nullptr);

// k members with the highest mean activation, ties to the lowest feature
// index; fewer than k members returns all of them.
SteeringSelection select_top_k(const FeatureSubgroup& subgroup, const MeanActivationVector& means,
                               int k = 3);

// JSONL dump of subgroups plus their selections (one record per subgroup).
struct SubgroupRecord {
    FeatureSubgroup subgroup;
    SteeringSelection selection;
};

void write_subgroup_dump(const std::vector<SubgroupRecord>& records, const std::filesystem::path& file);
std::vector<SubgroupRecord> read_subgroup_dump(const std::filesystem::path& file);

}  // namespace featsteer
