// Acceptance gate: eight end-to-end checks, one PASS/FAIL line each.
// Oracles come from oracles.{hpp,cpp}; the pipeline binary is exercised
// through FEATSTEER_BIN for the process-level criteria.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "featsteer/alignment.hpp"
#include "featsteer/distance.hpp"
#include "featsteer/heatmap.hpp"
#include "featsteer/linkage.hpp"
#include "featsteer/plan.hpp"
#include "featsteer/subgroups.hpp"
#include "featsteer/tensor_store.hpp"
#include "featsteer/toy_model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace featsteer;
namespace fs = std::filesystem;

#define REQUIRE_OR_FAIL(cond, msg)        \
    do {                                  \
        if (!(cond)) {                    \
            std::ostringstream oss_;      \
            oss_ << msg;                  \
            detail = oss_.str();          \
            return false;                 \
        }                                 \
    } while (0)

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int spawn(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -2;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

// --- 1. clustering equivalence against the definitional reference ---------

bool criterion_clustering(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    oracle::Rng rng(101);

    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(2, 64);
        const int num = rng.uniform_int(1, 8);
        std::vector<double> points(static_cast<size_t>(n) * num);
        TransposedActivations a;
        a.m = MatrixF(n, num);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < num; ++c) {
                // Rounded through float so the double-precision oracle sees
                // exactly the values the implementation works on.
                const float v = static_cast<float>(rng.uniform(-2.0, 2.0));
                points[static_cast<size_t>(i) * num + c] = v;
                a.m.at(i, c) = v;
            }
        if (trial % 4 == 3) {
            // Duplicated rows: the only tie class where recurrence and
            // definitional recomputation agree bit for bit (the shared
            // distances are exactly equal, the merged deltas exactly zero).
            auto copy_row = [&](int dst, int src) {
                for (int c = 0; c < num; ++c) {
                    points[static_cast<size_t>(dst) * num + c] =
                        points[static_cast<size_t>(src) * num + c];
                    a.m.at(dst, c) = a.m.at(src, c);
                }
            };
            copy_row(1, 0);
            if (n >= 5) copy_row(4, 3);
        }

        const PairwiseResult pr = pairwise_distances(a, Metric::euclidean, false);
        const std::vector<double>& d0 = pr.dist.condensed;

        for (const LinkCriterion crit :
             {LinkCriterion::ward, LinkCriterion::average, LinkCriterion::complete}) {
            const std::vector<oracle::RefMerge> expected =
                oracle::reference_linkage(n, num, points, d0, crit);
            const Dendrogram tree = build_dendrogram(pr.dist, crit);
            REQUIRE_OR_FAIL(static_cast<int>(tree.merges.size()) == n - 1,
                            "trial " << trial << ": merge count " << tree.merges.size());
            for (int k = 0; k < n - 1; ++k) {
                const Merge& m = tree.merges[k];
                const oracle::RefMerge& e = expected[k];
                const int lo = std::min(m.left, m.right);
                const int hi = std::max(m.left, m.right);
                REQUIRE_OR_FAIL(lo == e.lo_node && hi == e.hi_node,
                                "trial " << trial << " " << to_string(crit) << " merge " << k
                                         << ": (" << lo << "," << hi << ") != (" << e.lo_node
                                         << "," << e.hi_node << ")");
                REQUIRE_OR_FAIL(std::abs(m.height - e.height) <= 1e-6,
                                "trial " << trial << " " << to_string(crit) << " merge " << k
                                         << ": height " << m.height << " != " << e.height);
                REQUIRE_OR_FAIL(m.size == e.size, "trial " << trial << " merge " << k
                                                           << ": size " << m.size);
            }

            std::set<int> cuts = {1, 2, 3, n / 2, n - 1, n};
            for (int m_clusters : cuts) {
                m_clusters = std::clamp(m_clusters, 1, n);
                const std::vector<int> ref =
                    oracle::canonical_partition(oracle::reference_cut(n, expected, m_clusters));
                const std::vector<int> via_cut =
                    oracle::canonical_partition(cut_dendrogram(tree, m_clusters));
                const std::vector<int> via_cluster = oracle::canonical_partition(
                    agglomerative_cluster(pr.dist, crit, m_clusters));
                REQUIRE_OR_FAIL(via_cut == ref, "trial " << trial << " " << to_string(crit)
                                                         << ": cut at " << m_clusters
                                                         << " differs from reference");
                REQUIRE_OR_FAIL(via_cluster == ref,
                                "trial " << trial << " " << to_string(crit)
                                         << ": agglomerative_cluster at " << m_clusters
                                         << " differs from reference");
            }
        }
    }

    const double elapsed = seconds_since(t0);
    REQUIRE_OR_FAIL(elapsed < 30.0, "took " << elapsed << "s (budget 30s)");
    return true;
}

// --- 2. linkage subgroup contract against exhaustive subtree enumeration --

bool criterion_linkage_subgroup(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    oracle::Rng rng(202);

    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(2, 256);
        const Dendrogram tree = oracle::random_dendrogram(rng, n);
        const oracle::SubtreeTable table = oracle::enumerate_subtrees(tree);
        std::vector<int> feature_ids(n);
        for (int l = 0; l < n; ++l) feature_ids[l] = 7 + 3 * l;

        for (int leaf = 0; leaf < n; ++leaf) {
            const int anchor = feature_ids[leaf];
            for (const int max_size : {1, 2, 50, n}) {
                const std::vector<int> ref =
                    oracle::reference_linkage_subgroup(table, feature_ids, anchor, max_size);
                const FeatureSubgroup got =
                    subgroup_by_linkage(tree, feature_ids, anchor, 3, max_size);
                REQUIRE_OR_FAIL(got.members == ref,
                                "trial " << trial << " anchor " << anchor << " max_size "
                                         << max_size << ": member mismatch");
                REQUIRE_OR_FAIL(static_cast<int>(got.members.size()) <= max_size,
                                "trial " << trial << ": size " << got.members.size()
                                         << " exceeds " << max_size);
                REQUIRE_OR_FAIL(
                    std::find(got.members.begin(), got.members.end(), anchor) !=
                        got.members.end(),
                    "trial " << trial << ": anchor " << anchor << " missing from subgroup");
            }
        }

        // 8 is never of the form 7 + 3l: the absent-anchor fallback.
        const FeatureSubgroup absent = subgroup_by_linkage(tree, feature_ids, 8, 3, 50);
        REQUIRE_OR_FAIL(absent.members == std::vector<int>{8},
                        "trial " << trial << ": absent anchor did not yield a singleton");
    }

    const double elapsed = seconds_since(t0);
    REQUIRE_OR_FAIL(elapsed < 30.0, "took " << elapsed << "s (budget 30s)");
    return true;
}

// --- 3. cosine similarity and pos/anchor selection ------------------------

bool criterion_alignment(std::string& detail) {
    oracle::Rng rng(303);

    for (int trial = 0; trial < 10000; ++trial) {
        const int dim = rng.uniform_int(1, 64);
        std::vector<double> u(dim), v(dim);
        for (double& x : u) x = rng.uniform(-1.0, 1.0);
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        if (trial % 50 == 7) {
            std::fill(v.begin(), v.end(), 0.0);
            REQUIRE_OR_FAIL(cosine_similarity(u, v) == 0.0,
                            "trial " << trial << ": zero vector must map to exactly 0");
            continue;
        }
        const long double ref = oracle::cosine_ld(u, v);
        const double got = cosine_similarity(u, v);
        const double tol = std::max(1e-12, 1e-9 * static_cast<double>(std::abs(ref)));
        REQUIRE_OR_FAIL(std::abs(got - static_cast<double>(ref)) <= tol,
                        "trial " << trial << ": cos " << got << " vs " << ref);
    }

    for (int trial = 0; trial < 100; ++trial) {
        const int sl = rng.uniform_int(1, 12);
        const int d_model = rng.uniform_int(2, 24);
        const int m = rng.uniform_int(1, 4);

        ResidualStream resid;
        resid.layer = 2;
        resid.m = MatrixF(sl, d_model);
        SubspaceSet set;
        const bool all_nonpositive = trial % 10 == 0;
        const bool orthogonal = !all_nonpositive && trial % 13 == 0;
        for (int t = 0; t < sl; ++t)
            for (int c = 0; c < d_model; ++c) {
                const double lo = all_nonpositive ? 0.1 : -1.0;
                double x = rng.uniform(lo, 1.0);
                if (orthogonal && c >= d_model / 2) x = 0.0;
                resid.m.at(t, c) = static_cast<float>(x);
            }
        if (trial % 7 == 3 && sl >= 2)
            for (int c = 0; c < d_model; ++c) resid.m.at(1, c) = resid.m.at(0, c);
        for (int i = 0; i < m; ++i) {
            SubspaceConcept concept_i;
            concept_i.description = "c" + std::to_string(i);
            for (int c = 0; c < d_model; ++c) {
                double x = all_nonpositive ? rng.uniform(-1.0, -0.1) : rng.uniform(-1.0, 1.0);
                if (orthogonal && c < d_model / 2) x = 0.0;
                concept_i.vector.push_back(x);
            }
            set.concepts.push_back(concept_i);
        }

        // Brute-force scan in long double over the same float inputs. The
        // strictly-greater scan in (t, i) order reproduces the documented
        // tie-break by construction.
        std::vector<int> pos_ref;
        int anchor_t = -1, anchor_i = -1;
        long double best = -std::numeric_limits<long double>::infinity();
        for (int t = 0; t < sl; ++t) {
            std::vector<double> row(d_model);
            for (int c = 0; c < d_model; ++c) row[c] = resid.m.at(t, c);
            bool positive = false;
            for (int i = 0; i < m; ++i) {
                const long double s = oracle::cosine_ld(row, set.concepts[i].vector);
                positive = positive || s > 0.0L;
                if (s > best) {
                    best = s;
                    anchor_t = t;
                    anchor_i = i;
                }
            }
            if (positive) pos_ref.push_back(t);
        }
        if (pos_ref.empty()) {
            anchor_t = -1;
            anchor_i = -1;
        }

        const AlignmentResult got = select_pos_tokens(resid, set);
        REQUIRE_OR_FAIL(got.pos == pos_ref, "fixture " << trial << ": pos set mismatch");
        REQUIRE_OR_FAIL(got.anchor_token == anchor_t && got.anchor_concept == anchor_i,
                        "fixture " << trial << ": anchor (" << got.anchor_token << ","
                                   << got.anchor_concept << ") != (" << anchor_t << ","
                                   << anchor_i << ")");
        if (all_nonpositive || orthogonal)
            REQUIRE_OR_FAIL(got.pos.empty() && got.anchor_token == -1,
                            "fixture " << trial << ": boundary case must yield no pos tokens");
    }
    return true;
}

// --- 4. steering exactness on the default toy model -----------------------

bool criterion_steering(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    oracle::Rng rng(404);
    const ToyModelConfig cfg;
    const ToyLab lab = build_toy_model(cfg);

    for (int trial = 0; trial < 50; ++trial) {
        const int sl = rng.uniform_int(1, cfg.max_seq);
        std::vector<int> tokens(sl);
        for (int& t : tokens) t = rng.uniform_int(0, cfg.vocab - 1);

        const int layer = rng.uniform_int(0, cfg.layers - 1);
        SteeringPlan plan;
        const int n_entries = rng.uniform_int(1, 4);
        for (int e = 0; e < n_entries; ++e) {
            PlanEntry entry;
            entry.layer = layer;
            entry.feature = rng.uniform_int(0, cfg.d_sae - 1);
            entry.alpha = rng.uniform(-1.5, 1.5);
            entry.scale = rng.uniform(0.25, 1.5);
            plan.entries.push_back(entry);
        }

        const ForwardResult base = apply_steering_forward(lab.model, lab.sae, tokens, {});
        const ForwardResult steered = apply_steering_forward(lab.model, lab.sae, tokens, plan);

        for (int j = 0; j < layer; ++j)
            REQUIRE_OR_FAIL(
                std::memcmp(base.resid[j].m.data.data(), steered.resid[j].m.data.data(),
                            base.resid[j].m.data.size() * sizeof(float)) == 0,
                "trial " << trial << ": layer " << j << " below the plan is not bit-identical");

        for (int t = 0; t < sl; ++t)
            for (int c = 0; c < cfg.d_model; ++c) {
                double expected = 0.0;
                for (const PlanEntry& e : plan.entries)
                    expected += e.alpha * e.scale *
                                static_cast<double>(lab.sae.dec[layer].at(e.feature, c));
                const double delta = static_cast<double>(steered.resid[layer].m.at(t, c)) -
                                     static_cast<double>(base.resid[layer].m.at(t, c));
                REQUIRE_OR_FAIL(std::abs(delta - expected) <= 1e-6,
                                "trial " << trial << ": delta at (" << t << "," << c << ") is "
                                         << delta << ", expected " << expected);
            }
    }

    const double elapsed = seconds_since(t0);
    REQUIRE_OR_FAIL(elapsed < 10.0, "took " << elapsed << "s (budget 10s)");
    return true;
}

// --- 5. top-k selection against the full-sort oracle -----------------------

bool criterion_top_k(std::string& detail) {
    oracle::Rng rng(505);

    for (int trial = 0; trial < 1000; ++trial) {
        std::set<int> ids;
        const int count = rng.uniform_int(1, 12);
        while (static_cast<int>(ids.size()) < count) ids.insert(rng.uniform_int(0, 40));

        FeatureSubgroup sub;
        sub.layer = rng.uniform_int(0, 25);
        sub.members.assign(ids.begin(), ids.end());
        sub.anchor = sub.members[static_cast<size_t>(rng.uniform_int(0, count - 1))];
        MeanActivationVector means;
        means.layer = sub.layer;
        means.values.resize(static_cast<size_t>(rng.uniform_int(0, 45)));
        // Discrete levels make ties common; the tie-break must still agree.
        for (double& v : means.values) v = 0.5 * rng.uniform_int(0, 4);

        std::vector<std::vector<int>> chosen_by_k;
        for (const int k : {1, 2, 3}) {
            const SteeringSelection sel = select_top_k(sub, means, k);
            const std::vector<int> ref = oracle::reference_top_k(sub.members, means.values, k);
            REQUIRE_OR_FAIL(sel.chosen == ref, "trial " << trial << " k=" << k
                                                        << ": selection differs from full sort");
            REQUIRE_OR_FAIL(sel.means.size() == sel.chosen.size(),
                            "trial " << trial << ": means/chosen length mismatch");
            for (size_t i = 0; i < sel.chosen.size(); ++i) {
                const size_t f = static_cast<size_t>(sel.chosen[i]);
                const double expect = f < means.values.size() ? means.values[f] : 0.0;
                REQUIRE_OR_FAIL(sel.means[i] == expect,
                                "trial " << trial << ": reported mean for feature "
                                         << sel.chosen[i] << " is " << sel.means[i]);
            }
            chosen_by_k.push_back(sel.chosen);
        }
        for (size_t k = 1; k < chosen_by_k.size(); ++k) {
            const std::vector<int>& small = chosen_by_k[k - 1];
            const std::vector<int>& large = chosen_by_k[k];
            REQUIRE_OR_FAIL(small.size() <= large.size() &&
                                std::equal(small.begin(), small.end(), large.begin()),
                            "trial " << trial << ": k=" << k << " is not a prefix of k=" << k + 1);
        }
    }
    return true;
}

// --- 6. end-to-end determinism and heatmap shape ---------------------------

bool criterion_end_to_end(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    testutil::TempDir tmp("acceptance-run");
    const fs::path cfg = fs::absolute(testutil::fixture("run.toml"));
    const std::string bin = FEATSTEER_BIN;

    auto run_once = [&](const std::string& tag, int workers) {
        const fs::path out = tmp / tag;
        std::ostringstream cmd;
        cmd << quoted(bin) << " run --config " << quoted(cfg) << " --output-dir " << quoted(out)
            << " --workers " << workers << " > " << quoted(tmp / (tag + ".log")) << " 2>&1";
        return std::make_pair(spawn(cmd.str()), out);
    };

    const auto [code1, dir1] = run_once("w1", 1);
    REQUIRE_OR_FAIL(code1 == 0, "first run exited " << code1);
    const auto [code2, dir2] = run_once("w1b", 1);
    REQUIRE_OR_FAIL(code2 == 0, "repeat run exited " << code2);
    const auto [code3, dir3] = run_once("w8", 8);
    REQUIRE_OR_FAIL(code3 == 0, "workers=8 run exited " << code3);

    const std::vector<std::string> reports = {"cluster", "linkage", "single_token", "combined"};
    for (const std::string& r : reports) {
        const std::string bytes = testutil::read_file(dir1 / r / "outcomes.jsonl");
        REQUIRE_OR_FAIL(bytes == testutil::read_file(dir2 / r / "outcomes.jsonl"),
                        r << "/outcomes.jsonl differs between identical runs");
        REQUIRE_OR_FAIL(bytes == testutil::read_file(dir3 / r / "outcomes.jsonl"),
                        r << "/outcomes.jsonl differs between workers=1 and workers=8");
    }

    int total_cells = 0;
    for (const std::string& r : reports) {
        const SteerabilityHeatmap h = load_heatmap_csv(dir1 / r / "heatmap.csv");
        REQUIRE_OR_FAIL(h.categories.size() == 4,
                        r << ": heatmap has " << h.categories.size() << " rows, expected 4");
        REQUIRE_OR_FAIL(h.layers == 4, r << ": heatmap has " << h.layers
                                         << " layer columns, expected 4");
        const std::vector<JudgedOutcome> outcomes = read_outcomes(dir1 / r / "outcomes.jsonl");
        REQUIRE_OR_FAIL(!outcomes.empty(), r << ": no judged outcomes");
        const std::vector<int> recount =
            oracle::recount_heatmap(outcomes, h.categories, h.layers);
        REQUIRE_OR_FAIL(recount == h.cells, r << ": cells differ from the strict recount");
        for (const int c : h.cells) total_cells += c;
    }
    REQUIRE_OR_FAIL(total_cells > 0, "every heatmap cell is zero; the check is vacuous");

    const double elapsed = seconds_since(t0);
    REQUIRE_OR_FAIL(elapsed < 120.0, "took " << elapsed << "s (budget 120s)");
    return true;
}

// --- 7. capture-scale shape fixture ----------------------------------------

bool criterion_capture_scale(std::string& detail) {
    testutil::TempDir tmp("acceptance-scale");
    const int layers = 26, sl = 6, d_model = 16, d_sae = 16384, num = 4;

    ActivationBundle b;
    b.meta.layers = layers;
    b.meta.sl = sl;
    b.meta.d_model = d_model;
    b.meta.d_sae = d_sae;
    b.meta.num = num;
    b.meta.pos_token_ids = {0, 2, 4, 5};
    for (int t = 0; t < sl; ++t) b.meta.tokens.push_back("t" + std::to_string(t));
    b.meta.prompt_id = "scale";
    for (int k = 0; k < layers; ++k) {
        ResidualStream rs;
        rs.layer = k;
        rs.m = MatrixF(sl, d_model);
        b.resid.push_back(std::move(rs));
        LayerActivations la;
        la.layer = k;
        la.token_ids = b.meta.pos_token_ids;
        la.m = MatrixF(num, d_sae);
        b.sae.push_back(std::move(la));
    }
    const fs::path dir = tmp / "bundles" / "scale";
    write_activation_bundle(b, dir);
    const ActivationBundle back = read_activation_bundle(dir);
    REQUIRE_OR_FAIL(back.meta.layers == layers && back.meta.d_sae == d_sae &&
                        back.meta.d_model == d_model && back.meta.sl == sl &&
                        back.meta.num == num,
                    "round-trip changed the declared shape");

    std::ostringstream cmd;
    cmd << quoted(std::string(FEATSTEER_BIN)) << " ingest --bundles " << quoted(tmp / "bundles")
        << " > " << quoted(tmp / "ingest.log") << " 2>&1";
    const int code = spawn(cmd.str());
    REQUIRE_OR_FAIL(code == 0, "ingest exited " << code);

    // Dead-feature path: every row zero, so active_only must dodge the
    // 16384^2 distance matrix entirely.
    TransposedActivations dead;
    dead.layer = 0;
    dead.m = MatrixF(d_sae, num);
    const auto t0 = std::chrono::steady_clock::now();
    const PairwiseResult dead_pr = pairwise_distances(dead, Metric::euclidean, true);
    const double dead_elapsed = seconds_since(t0);
    REQUIRE_OR_FAIL(dead_pr.dist.n == 0, "zero matrix produced " << dead_pr.dist.n
                                                                 << " live rows");
    REQUIRE_OR_FAIL(dead_pr.dead_features == d_sae,
                    "expected " << d_sae << " dead features, got " << dead_pr.dead_features);
    REQUIRE_OR_FAIL(dead_elapsed < 60.0, "distance setup took " << dead_elapsed
                                                                << "s (budget 60s)");

    // 64 live rows in two tight blobs: the <=50 cap must bite at the root and
    // return exactly the anchor's 32-feature blob.
    oracle::Rng rng(707);
    TransposedActivations sparse;
    sparse.layer = 0;
    sparse.m = MatrixF(d_sae, num);
    std::vector<int> live_ids;
    for (int r = 0; r < 64; ++r) {
        const int id = 200 * r + 11;
        live_ids.push_back(id);
        const double base = r < 32 ? 1.0 : 9.0;
        for (int c = 0; c < num; ++c)
            sparse.m.at(id, c) = static_cast<float>(rng.uniform(base, base + 0.2));
    }
    const PairwiseResult live_pr = pairwise_distances(sparse, Metric::euclidean, true);
    REQUIRE_OR_FAIL(live_pr.dist.n == 64, "expected 64 live rows, got " << live_pr.dist.n);
    REQUIRE_OR_FAIL(live_pr.feature_ids == live_ids, "live feature ids are wrong");
    const Dendrogram tree = build_dendrogram(live_pr.dist, LinkCriterion::average);
    for (const int r : {0, 40}) {
        const int anchor = live_ids[static_cast<size_t>(r)];
        const FeatureSubgroup sub =
            subgroup_by_linkage(tree, live_pr.feature_ids, anchor, 0, 50);
        REQUIRE_OR_FAIL(sub.members.size() == 32, "anchor " << anchor << ": subgroup size "
                                                            << sub.members.size()
                                                            << ", expected the 32-feature blob");
        for (const int f : sub.members) {
            const bool same_blob = r < 32 ? f < 200 * 32 + 11 : f >= 200 * 32 + 11;
            REQUIRE_OR_FAIL(same_blob, "anchor " << anchor << ": member " << f
                                                 << " crossed into the other blob");
        }
    }
    return true;
}

// --- 8. byte-level round-trips ---------------------------------------------

bool criterion_round_trips(std::string& detail) {
    testutil::TempDir tmp("acceptance-bytes");
    oracle::Rng rng(808);

    for (int i = 0; i < 20; ++i) {
        ActivationBundle b;
        b.meta.layers = rng.uniform_int(1, 4);
        b.meta.sl = rng.uniform_int(1, 5);
        b.meta.d_model = rng.uniform_int(1, 6);
        b.meta.d_sae = rng.uniform_int(1, 8);
        b.meta.num = rng.uniform_int(0, std::min(3, b.meta.sl));
        for (int t = 0; t < b.meta.num; ++t) b.meta.pos_token_ids.push_back(t);
        for (int t = 0; t < b.meta.sl; ++t) b.meta.tokens.push_back("t" + std::to_string(t));
        b.meta.prompt_id = "rt" + std::to_string(i);
        for (int k = 0; k < b.meta.layers; ++k) {
            ResidualStream rs;
            rs.layer = k;
            rs.m = MatrixF(b.meta.sl, b.meta.d_model);
            for (float& v : rs.m.data) v = static_cast<float>(rng.uniform(-100.0, 100.0));
            b.resid.push_back(std::move(rs));
            LayerActivations la;
            la.layer = k;
            la.token_ids = b.meta.pos_token_ids;
            la.m = MatrixF(b.meta.num, b.meta.d_sae);
            for (float& v : la.m.data) v = static_cast<float>(rng.uniform(0.0, 50.0));
            b.sae.push_back(std::move(la));
        }
        const fs::path d1 = tmp / ("bundle-" + std::to_string(i) + "-a");
        const fs::path d2 = tmp / ("bundle-" + std::to_string(i) + "-b");
        write_activation_bundle(b, d1);
        write_activation_bundle(read_activation_bundle(d1), d2);
        for (const fs::directory_entry& e : fs::directory_iterator(d1)) {
            const std::string name = e.path().filename().string();
            REQUIRE_OR_FAIL(testutil::read_file(d1 / name) == testutil::read_file(d2 / name),
                            "bundle " << i << ": " << name << " is not byte-stable");
        }
    }

    for (int i = 0; i < 20; ++i) {
        std::vector<SubgroupRecord> records;
        const int n_records = rng.uniform_int(1, 5);
        for (int r = 0; r < n_records; ++r) {
            SubgroupRecord rec;
            rec.subgroup.layer = rng.uniform_int(0, 25);
            std::set<int> ids;
            const int want = rng.uniform_int(1, 6);
            while (static_cast<int>(ids.size()) < want) ids.insert(rng.uniform_int(0, 500));
            rec.subgroup.members.assign(ids.begin(), ids.end());
            rec.subgroup.anchor =
                rec.subgroup.members[static_cast<size_t>(rng.uniform_int(
                    0, static_cast<int>(rec.subgroup.members.size()) - 1))];
            rec.subgroup.method = static_cast<GroupMethod>(rng.uniform_int(0, 2));
            rec.selection.layer = rec.subgroup.layer;
            rec.selection.method = rec.subgroup.method;
            rec.selection.anchor = rec.subgroup.anchor;
            const int k = std::min<int>(rng.uniform_int(1, 3),
                                        static_cast<int>(rec.subgroup.members.size()));
            for (int j = 0; j < k; ++j) {
                rec.selection.chosen.push_back(rec.subgroup.members[static_cast<size_t>(j)]);
                rec.selection.means.push_back(rng.uniform(0.0, 5.0));
            }
            records.push_back(std::move(rec));
        }
        const fs::path f1 = tmp / ("subgroups-" + std::to_string(i) + "-a.jsonl");
        const fs::path f2 = tmp / ("subgroups-" + std::to_string(i) + "-b.jsonl");
        write_subgroup_dump(records, f1);
        write_subgroup_dump(read_subgroup_dump(f1), f2);
        REQUIRE_OR_FAIL(testutil::read_file(f1) == testutil::read_file(f2),
                        "subgroup dump " << i << " is not byte-stable");
    }

    for (int i = 0; i < 20; ++i) {
        SteeringPlan plan;
        const int n_entries = rng.uniform_int(0, 5);
        for (int e = 0; e < n_entries; ++e) {
            PlanEntry entry;
            entry.layer = rng.uniform_int(0, 30);
            entry.feature = rng.uniform_int(0, 2000);
            entry.alpha = rng.uniform(-8.0, 8.0);
            entry.scale = rng.uniform(0.1, 4.0);
            plan.entries.push_back(entry);
        }
        const fs::path f1 = tmp / ("plan-" + std::to_string(i) + "-a.json");
        const fs::path f2 = tmp / ("plan-" + std::to_string(i) + "-b.json");
        export_plan(plan, f1);
        export_plan(read_plan(f1), f2);
        REQUIRE_OR_FAIL(testutil::read_file(f1) == testutil::read_file(f2),
                        "plan " << i << " is not byte-stable");
    }

    for (int i = 0; i < 20; ++i) {
        SteerabilityHeatmap h;
        h.categories = {"plain_" + std::to_string(i), "with,comma", "with\"quote"};
        h.layers = rng.uniform_int(1, 6);
        h.cells.resize(h.categories.size() * static_cast<size_t>(h.layers));
        for (int& c : h.cells) c = rng.uniform_int(0, 9);
        const fs::path f1 = tmp / ("heatmap-" + std::to_string(i) + "-a.csv");
        const fs::path f2 = tmp / ("heatmap-" + std::to_string(i) + "-b.csv");
        write_heatmap_csv(h, f1);
        write_heatmap_csv(load_heatmap_csv(f1), f2);
        REQUIRE_OR_FAIL(testutil::read_file(f1) == testutil::read_file(f2),
                        "heatmap csv " << i << " is not byte-stable");
    }
    return true;
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        bool (*fn)(std::string&);
    };
    const std::vector<Criterion> criteria = {
        {"clustering matches the definitional reference", criterion_clustering},
        {"linkage subgroups match exhaustive subtree enumeration", criterion_linkage_subgroup},
        {"alignment matches the extended-precision scan", criterion_alignment},
        {"steering deltas are exact at the planned layer", criterion_steering},
        {"top-k selection matches the full-sort oracle", criterion_top_k},
        {"end-to-end run is deterministic with a 4xL heatmap", criterion_end_to_end},
        {"capture-scale shapes ingest and cap correctly", criterion_capture_scale},
        {"formats round-trip at byte level", criterion_round_trips},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        std::string detail;
        bool ok = false;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            ok = criteria[i].fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("unexpected exception: ") + e.what();
        }
        const double elapsed = seconds_since(t0);
        std::ostringstream line;
        line << (ok ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].name;
        if (!ok) line << " -- " << detail;
        line.setf(std::ios::fixed);
        line.precision(1);
        line << " (" << elapsed << "s)";
        std::cout << line.str() << std::endl;
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
