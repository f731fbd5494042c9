#include "featsteer/alignment.hpp"

#include <algorithm>
#include <cmath>

namespace featsteer {

double cosine_similarity(std::span<const double> u, std::span<const double> v, Warnings* warnings) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    if (u.empty()) throw std::invalid_argument("cosine_similarity: empty vectors");

    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) {
        warn(warnings, "cosine_similarity: zero vector, similarity defined as 0");
        return 0.0;
    }
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

AlignmentResult select_pos_tokens(const ResidualStream& resid, const SubspaceSet& subspaces,
                                  Warnings* warnings) {
    const int sl = resid.m.rows;
    const int d_model = resid.m.cols;
    const int m = subspaces.size();
    if (sl == 0) throw std::invalid_argument("select_pos_tokens: empty prompt");
    if (m == 0) throw std::invalid_argument("select_pos_tokens: no subspaces");
    if (subspaces.dim() != d_model)
        throw std::invalid_argument("select_pos_tokens: subspace dim " + std::to_string(subspaces.dim()) +
                                    " != residual d_model " + std::to_string(d_model));

    AlignmentResult result;
    result.alignment_layer = resid.layer;
    result.sl = sl;
    result.m = m;
    result.sim.resize(static_cast<size_t>(sl) * m);

    std::vector<double> token(d_model);
    double best = 0.0;
    for (int t = 0; t < sl; ++t) {
        for (int d = 0; d < d_model; ++d) token[d] = resid.m.at(t, d);
        double row_max = -2.0;
        for (int i = 0; i < m; ++i) {
            const double s = cosine_similarity(token, subspaces.concepts[i].vector, warnings);
            result.sim[static_cast<size_t>(t) * m + i] = s;
            row_max = std::max(row_max, s);
            // strict argmax with lowest-(t, i) tie-break
            if (result.anchor_token < 0 || s > best) {
                best = s;
                result.anchor_token = t;
                result.anchor_concept = i;
            }
        }
        if (row_max > 0.0) result.pos.push_back(t);
    }

    if (result.pos.empty()) {
        // No aligned token: the argmax would point at an arbitrary
        // nonpositive similarity, so the anchor stays unset.
        result.anchor_token = -1;
        result.anchor_concept = -1;
        warn(warnings, "select_pos_tokens: no token has positive similarity to any subspace");
    }
    return result;
}

}  // namespace featsteer
