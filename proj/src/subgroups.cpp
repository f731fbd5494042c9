#include "featsteer/subgroups.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

using nlohmann::json;

namespace featsteer {

GroupMethod method_from_string(const std::string& name) {
    if (name == "cluster") return GroupMethod::cluster;
    if (name == "linkage") return GroupMethod::linkage;
    if (name == "single_token") return GroupMethod::single_token;
    throw std::invalid_argument("unknown method '" + name +
                                "' (expected cluster, linkage, or single_token)");
}

std::string to_string(GroupMethod m) {
    switch (m) {
        case GroupMethod::cluster: return "cluster";
        case GroupMethod::linkage: return "linkage";
        default: return "single_token";
    }
}

AnchorFeatureSet anchor_features_from_pos(const LayerActivations& acts, Warnings* warnings) {
    if (acts.m.rows < 1) throw std::invalid_argument("anchor_features_from_pos: empty pos set");

    AnchorFeatureSet set;
    set.source = AnchorSource::pos_argmax;
    std::vector<bool> seen(acts.m.cols, false);
    for (int r = 0; r < acts.m.rows; ++r) {
        int best = -1;
        float best_val = 0.0f;
        for (int f = 0; f < acts.m.cols; ++f) {
            const float v = acts.m.at(r, f);
            if (best < 0 || v > best_val) {
                best = f;
                best_val = v;
            }
        }
        if (best_val == 0.0f) {
            bool all_zero = true;
            for (int f = 0; f < acts.m.cols && all_zero; ++f) all_zero = acts.m.at(r, f) == 0.0f;
            if (all_zero) {
                warn(warnings, "pos token " + std::to_string(acts.token_ids[r]) +
                                   " has no active feature, contributes no anchor");
                continue;
            }
        }
        if (!seen[best]) {
            seen[best] = true;
            set.features.push_back(best);
        }
    }
    return set;
}

AnchorFeatureSet anchor_features_on_token(const LayerActivations& acts, int token, int k,
                                          Warnings* warnings) {
    auto it = std::find(acts.token_ids.begin(), acts.token_ids.end(), token);
    if (it == acts.token_ids.end())
        throw std::invalid_argument("anchor_features_on_token: token " + std::to_string(token) +
                                    " is not in the pos set");
    const int row = static_cast<int>(it - acts.token_ids.begin());

    std::vector<int> order(acts.m.cols);
    for (int f = 0; f < acts.m.cols; ++f) order[f] = f;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return acts.m.at(row, a) > acts.m.at(row, b);  // ties keep the lower index
    });

    AnchorFeatureSet set;
    set.source = AnchorSource::token_topk;
    for (int i = 0; i < static_cast<int>(order.size()) && static_cast<int>(set.features.size()) < k; ++i) {
        if (acts.m.at(row, order[i]) == 0.0f) break;
        set.features.push_back(order[i]);
    }
    if (static_cast<int>(set.features.size()) < k)
        warn(warnings, "token " + std::to_string(token) + " has only " +
                           std::to_string(set.features.size()) + " nonzero features (wanted " +
                           std::to_string(k) + ")");
    return set;
}

FeatureSubgroup subgroup_by_cluster(const std::vector<int>& labels, const std::vector<int>& feature_ids,
                                    int anchor, int layer, Warnings* warnings) {
    if (labels.size() != feature_ids.size())
        throw std::invalid_argument("subgroup_by_cluster: labels/feature_ids size mismatch");

    FeatureSubgroup group;
    group.layer = layer;
    group.anchor = anchor;
    group.method = GroupMethod::cluster;

    int anchor_row = -1;
    for (size_t i = 0; i < feature_ids.size(); ++i) {
        if (feature_ids[i] == anchor) {
            anchor_row = static_cast<int>(i);
            break;
        }
    }
    if (anchor_row < 0) {
        warn(warnings, "anchor feature " + std::to_string(anchor) +
                           " was excluded from clustering as dead; singleton subgroup");
        group.members = {anchor};
        return group;
    }

    const int label = labels[anchor_row];
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) group.members.push_back(feature_ids[i]);
    }
    std::sort(group.members.begin(), group.members.end());
    return group;
}

FeatureSubgroup subgroup_by_linkage(const Dendrogram& tree, const std::vector<int>& feature_ids,
                                    int anchor, int layer, int max_size) {
    if (static_cast<int>(feature_ids.size()) != tree.n_leaves)
        throw std::invalid_argument("subgroup_by_linkage: feature_ids/tree size mismatch");
    if (max_size < 1) throw std::invalid_argument("subgroup_by_linkage: max_size must be >= 1");

    FeatureSubgroup group;
    group.layer = layer;
    group.anchor = anchor;
    group.method = GroupMethod::linkage;

    int leaf = -1;
    for (size_t i = 0; i < feature_ids.size(); ++i) {
        if (feature_ids[i] == anchor) {
            leaf = static_cast<int>(i);
            break;
        }
    }
    if (leaf < 0) {
        group.members = {anchor};
        return group;
    }

    // parent[] over all node ids; ascend while the ancestor stays within
    // max_size, keeping the highest qualifying node.
    const int n = tree.n_leaves;
    std::vector<int> parent(2 * n - 1, -1);
    std::vector<int> node_size(2 * n - 1, 1);
    for (int k = 0; k < static_cast<int>(tree.merges.size()); ++k) {
        parent[tree.merges[k].left] = n + k;
        parent[tree.merges[k].right] = n + k;
        node_size[n + k] = tree.merges[k].size;
    }

    int chosen = leaf;
    for (int cur = parent[leaf]; cur >= 0; cur = parent[cur]) {
        if (node_size[cur] > max_size) break;
        chosen = cur;
    }

    for (int idx : leaves_under(tree, chosen)) group.members.push_back(feature_ids[idx]);
    std::sort(group.members.begin(), group.members.end());
    return group;
}

FeatureSubgroup subgroup_single_token(const LayerActivations& acts, int token, int anchor,
                                      int max_size, LinkCriterion criterion, bool active_only,
                                      Warnings* warnings) {
    auto it = std::find(acts.token_ids.begin(), acts.token_ids.end(), token);
    if (it == acts.token_ids.end())
        throw std::invalid_argument("subgroup_single_token: token " + std::to_string(token) +
                                    " is not in the pos set");
    const int row = static_cast<int>(it - acts.token_ids.begin());

    std::vector<double> values(acts.m.cols);
    for (int f = 0; f < acts.m.cols; ++f) values[f] = acts.m.at(row, f);

    PairwiseResult pairs = pairwise_distances_1d(values, active_only);

    FeatureSubgroup group;
    if (pairs.dist.n < 2) {
        if (std::find(pairs.feature_ids.begin(), pairs.feature_ids.end(), anchor) ==
            pairs.feature_ids.end())
            warn(warnings, "anchor feature " + std::to_string(anchor) +
                               " is inactive on token " + std::to_string(token));
        group.layer = acts.layer;
        group.anchor = anchor;
        group.members = {anchor};
    } else {
        const Dendrogram tree = build_dendrogram(pairs.dist, criterion);
        group = subgroup_by_linkage(tree, pairs.feature_ids, anchor, acts.layer, max_size);
    }
    group.method = GroupMethod::single_token;
    return group;
}

SteeringSelection select_top_k(const FeatureSubgroup& subgroup, const MeanActivationVector& means,
                               int k) {
    if (subgroup.layer != means.layer)
        throw std::invalid_argument("select_top_k: subgroup layer " + std::to_string(subgroup.layer) +
                                    " != means layer " + std::to_string(means.layer));
    if (k < 1) throw std::invalid_argument("select_top_k: k must be >= 1");

    std::vector<int> order = subgroup.members;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double ma = a < static_cast<int>(means.values.size()) ? means.values[a] : 0.0;
        const double mb = b < static_cast<int>(means.values.size()) ? means.values[b] : 0.0;
        if (ma != mb) return ma > mb;
        return a < b;
    });
    if (static_cast<int>(order.size()) > k) order.resize(k);

    SteeringSelection sel;
    sel.layer = subgroup.layer;
    sel.method = subgroup.method;
    sel.anchor = subgroup.anchor;
    sel.chosen = order;
    for (int f : order)
        sel.means.push_back(f < static_cast<int>(means.values.size()) ? means.values[f] : 0.0);
    return sel;
}

void write_subgroup_dump(const std::vector<SubgroupRecord>& records, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    for (const SubgroupRecord& rec : records) {
        json j;
        j["layer"] = rec.subgroup.layer;
        j["anchor"] = rec.subgroup.anchor;
        j["method"] = to_string(rec.subgroup.method);
        j["members"] = rec.subgroup.members;
        j["chosen"] = rec.selection.chosen;
        j["mean_acts"] = rec.selection.means;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

std::vector<SubgroupRecord> read_subgroup_dump(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open subgroup dump: " + file.string());

    std::vector<SubgroupRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            SubgroupRecord rec;
            rec.subgroup.layer = j.at("layer").get<int>();
            rec.subgroup.anchor = j.at("anchor").get<int>();
            rec.subgroup.method = method_from_string(j.at("method").get<std::string>());
            rec.subgroup.members = j.at("members").get<std::vector<int>>();
            rec.selection.layer = rec.subgroup.layer;
            rec.selection.method = rec.subgroup.method;
            rec.selection.anchor = rec.subgroup.anchor;
            rec.selection.chosen = j.at("chosen").get<std::vector<int>>();
            rec.selection.means = j.at("mean_acts").get<std::vector<double>>();
            records.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace featsteer
