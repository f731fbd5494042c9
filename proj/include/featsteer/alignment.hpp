#pragma once

// Subspace-token cosine similarity at the alignment layer, pos-token
// selection, and the single anchor token used by the single-token approach.

#include <span>
#include <vector>

#include "featsteer/common.hpp"
#include "featsteer/tensor_store.hpp"

namespace featsteer {

struct AlignmentResult {
    int alignment_layer = 0;
    int sl = 0;
    int m = 0;
    std::vector<double> sim;        // sl x m, row-major; sim[t*m + i] = cos(s_i, resid[t])
    std::vector<int> pos;           // ascending token order, max_i sim[t][i] > 0
    int anchor_token = -1;          // argmax over (t, i), ties to lowest t then lowest i
    int anchor_concept = -1;

    double sim_at(int t, int i) const { return sim[static_cast<size_t>(t) * m + i]; }
};

// u.v / (|u||v|), clamped to [-1, 1]. A zero vector yields 0 with a warning:
// the token carries no direction.
double cosine_similarity(std::span<const double> u, std::span<const double> v,
                         Warnings* warnings = nullptr);

// Throws on an empty prompt or a d_model mismatch. pos may come back empty;
// the caller decides whether to skip the prompt.
AlignmentResult select_pos_tokens(const ResidualStream& resid, const SubspaceSet& subspaces,
                                  Warnings* warnings = nullptr);

}  // namespace featsteer
