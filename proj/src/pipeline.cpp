#include "featsteer/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <thread>
#include <tuple>

#include "featsteer/alignment.hpp"
#include "featsteer/corpus.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace featsteer {

namespace {

struct PromptWork {
    std::string category;
    DataPoint dp;
};

struct PromptContext {
    const RunConfig& cfg;
    SubspaceSet subspaces;
    ToyLab lab;
};

struct Prepared {
    std::vector<int> tokens;  // generation prompt (may be truncated to fit)
    int sl = 0;               // alignment-side prompt length
    AlignmentResult align;
    std::vector<LayerActivations> acts;  // pos-restricted, one per layer
};

// Slot index i is the work-item index, so the reduction is independent of
// worker count.
template <typename Fn>
void parallel_for(size_t n, int workers, Fn fn) {
    workers = std::max(1, std::min(workers, static_cast<int>(n)));
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (std::thread& t : pool) t.join();
}

SkipRecord skip(const PromptWork& work, int layer, std::string stage, std::string reason) {
    return SkipRecord{work.dp.id, work.category, layer, std::move(stage), std::move(reason)};
}

std::vector<int> generation_tokens(const RunConfig& cfg, const std::string& prompt) {
    std::vector<int> tokens = toy_tokenize(prompt, cfg.toy.vocab);
    // Leave room for max_new generated tokens under the max_seq cap.
    const int keep = std::max(1, cfg.toy.max_seq - cfg.max_new);
    if (static_cast<int>(tokens.size()) > keep) tokens.resize(keep);
    return tokens;
}

std::optional<Prepared> prepare_prompt(const PromptContext& ctx, const PromptWork& work,
                                       std::vector<SkipRecord>& skips, Warnings& warnings) {
    const RunConfig& cfg = ctx.cfg;
    Prepared prep;
    prep.tokens = generation_tokens(cfg, work.dp.prompt);
    if (prep.tokens.empty()) {
        skips.push_back(skip(work, -1, "tokenize", "prompt has no tokens"));
        return std::nullopt;
    }

    if (cfg.source == ActivationSource::toy) {
        const ForwardResult fwd =
            apply_steering_forward(ctx.lab.model, ctx.lab.sae, prep.tokens, SteeringPlan{});
        prep.sl = static_cast<int>(prep.tokens.size());
        prep.align = select_pos_tokens(fwd.resid[cfg.alignment_layer], ctx.subspaces, &warnings);
        if (prep.align.pos.empty()) {
            skips.push_back(skip(work, -1, "alignment", "empty pos set"));
            return std::nullopt;
        }
        ActivationBundle bundle =
            capture_activations(ctx.lab.model, ctx.lab.sae, prep.tokens, prep.align.pos, work.dp.id);
        prep.acts = std::move(bundle.sae);
        return prep;
    }

    const fs::path dir = cfg.bundle_dir / work.dp.id;
    if (!fs::is_directory(dir)) {
        skips.push_back(skip(work, -1, "activations", "no bundle directory " + dir.string()));
        return std::nullopt;
    }
    ActivationBundle bundle;
    try {
        bundle = read_activation_bundle(dir);
    } catch (const std::exception& e) {
        skips.push_back(skip(work, -1, "activations", e.what()));
        return std::nullopt;
    }
    // Steering runs on the toy model, so the bundle must share its shape.
    if (bundle.meta.layers != cfg.toy.layers || bundle.meta.d_model != cfg.toy.d_model ||
        bundle.meta.d_sae != cfg.toy.d_sae) {
        skips.push_back(skip(work, -1, "activations",
                             "bundle shape (L=" + std::to_string(bundle.meta.layers) +
                                 ", d_model=" + std::to_string(bundle.meta.d_model) + ", d_sae=" +
                                 std::to_string(bundle.meta.d_sae) + ") differs from toy model"));
        return std::nullopt;
    }
    if (cfg.alignment_layer >= bundle.meta.layers) {
        skips.push_back(skip(work, -1, "alignment",
                             "alignment layer " + std::to_string(cfg.alignment_layer) +
                                 " outside bundle layers"));
        return std::nullopt;
    }

    prep.sl = bundle.meta.sl;
    prep.align = select_pos_tokens(bundle.resid[cfg.alignment_layer], ctx.subspaces, &warnings);
    if (prep.align.pos.empty()) {
        skips.push_back(skip(work, -1, "alignment", "empty pos set"));
        return std::nullopt;
    }

    // The bundle stores rows for its own pos set; re-aligned positions must
    // all be covered.
    for (int k = 0; k < bundle.meta.layers; ++k) {
        const LayerActivations& src = bundle.sae[k];
        LayerActivations subset;
        subset.layer = k;
        subset.token_ids = prep.align.pos;
        subset.m = MatrixF(static_cast<int>(prep.align.pos.size()), bundle.meta.d_sae);
        for (size_t r = 0; r < prep.align.pos.size(); ++r) {
            const auto it =
                std::find(src.token_ids.begin(), src.token_ids.end(), prep.align.pos[r]);
            if (it == src.token_ids.end()) {
                skips.push_back(skip(work, -1, "alignment",
                                     "bundle rows do not cover aligned pos token " +
                                         std::to_string(prep.align.pos[r])));
                return std::nullopt;
            }
            const int row = static_cast<int>(it - src.token_ids.begin());
            for (int f = 0; f < bundle.meta.d_sae; ++f)
                subset.m.at(static_cast<int>(r), f) = src.m.at(row, f);
        }
        prep.acts.push_back(std::move(subset));
    }
    return prep;
}

// All (layer, anchor) selections for one prompt, in ascending layer order
// with anchors in their discovery order.
std::vector<SubgroupRecord> prompt_subgroups(const PromptContext& ctx, const Prepared& prep,
                                             const std::string& approach, Warnings& warnings) {
    const RunConfig& cfg = ctx.cfg;
    const int layers = static_cast<int>(prep.acts.size());

    std::vector<int> anchors;  // shared anchor set for cluster/linkage
    if (approach == "cluster" || approach == "linkage")
        anchors = anchor_features_from_pos(prep.acts[cfg.alignment_layer], &warnings).features;

    std::vector<SubgroupRecord> records;
    for (int k = 0; k < layers; ++k) {
        const LayerActivations& acts = prep.acts[k];
        const TransposedActivations ta = transpose_layer(acts);
        const MeanActivationVector means = mean_over_tokens(ta);

        auto push = [&](FeatureSubgroup sub) {
            SubgroupRecord rec;
            rec.selection = select_top_k(sub, means, cfg.top_k);
            rec.subgroup = std::move(sub);
            records.push_back(std::move(rec));
        };

        if (approach == "cluster") {
            const PairwiseResult pr =
                pairwise_distances(ta, cfg.metric, cfg.active_only, &warnings);
            std::vector<int> labels;
            if (pr.dist.n >= 1)
                labels = agglomerative_cluster(pr.dist, cfg.cluster_criterion,
                                               std::min(cfg.n_clusters, pr.dist.n));
            for (int anchor : anchors)
                push(subgroup_by_cluster(labels, pr.feature_ids, anchor, k, &warnings));
        } else if (approach == "linkage") {
            const PairwiseResult pr =
                pairwise_distances(ta, cfg.metric, cfg.active_only, &warnings);
            if (pr.dist.n >= 2) {
                const Dendrogram tree = build_dendrogram(pr.dist, cfg.subgroup_criterion);
                for (int anchor : anchors)
                    push(subgroup_by_linkage(tree, pr.feature_ids, anchor, k, cfg.max_size));
            } else {
                for (int anchor : anchors) {
                    FeatureSubgroup sub;
                    sub.layer = k;
                    sub.anchor = anchor;
                    sub.members = {anchor};
                    sub.method = GroupMethod::linkage;
                    push(std::move(sub));
                }
            }
        } else {  // single_token
            const int t = prep.align.anchor_token;
            const AnchorFeatureSet layer_anchors =
                anchor_features_on_token(acts, t, cfg.anchor_k, &warnings);
            for (int anchor : layer_anchors.features)
                push(subgroup_single_token(acts, t, anchor, cfg.max_size, cfg.subgroup_criterion,
                                           cfg.active_only, &warnings));
        }
    }
    return records;
}

std::string sanitize_id(const std::string& id) {
    std::string out;
    for (char c : id)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')
                   ? c
                   : '_';
    return out;
}

double feature_scale(const LayerActivations& acts, int feature) {
    float best = 0.0f;
    for (int r = 0; r < acts.m.rows; ++r) best = std::max(best, acts.m.at(r, feature));
    return best > 0.0f ? static_cast<double>(best) : 1.0;  // never-fired features fall back to 1
}

struct LoadedCorpus {
    std::vector<PromptWork> work;
    std::vector<std::string> categories;  // with at least one sampled prompt
    Warnings warnings;
};

LoadedCorpus load_and_sample(const RunConfig& cfg) {
    LoadedCorpus out;

    std::vector<std::string> vocabulary = default_category_vocabulary();
    for (const std::string& c : cfg.categories)
        if (std::find(vocabulary.begin(), vocabulary.end(), c) == vocabulary.end())
            vocabulary.push_back(c);

    const LoadResult loaded = load_dataset(cfg.dataset, vocabulary);
    for (const std::string& d : loaded.diagnostics) out.warnings.push_back(d);

    const SampledCorpus sampled =
        sample_single_category(loaded.records, cfg.per_category, cfg.seed, &out.warnings);

    std::vector<std::string> wanted = cfg.categories;
    if (wanted.empty())
        for (const auto& [cat, prompts] : sampled.per_category) wanted.push_back(cat);

    for (const std::string& cat : wanted) {
        const auto it = sampled.per_category.find(cat);
        if (it == sampled.per_category.end() || it->second.empty()) {
            out.warnings.push_back("category '" + cat + "' has no eligible records");
            continue;
        }
        out.categories.push_back(cat);
        for (const DataPoint& dp : it->second) out.work.push_back(PromptWork{cat, dp});
    }
    return out;
}

PromptContext make_context(const RunConfig& cfg) {
    PromptContext ctx{cfg, read_subspaces(cfg.subspaces, cfg.normalize_subspaces),
                      build_toy_model(cfg.toy)};
    if (cfg.source == ActivationSource::toy && ctx.subspaces.dim() != cfg.toy.d_model)
        throw ConfigError("run.subspaces dimension " + std::to_string(ctx.subspaces.dim()) +
                          " does not match toy.d_model " + std::to_string(cfg.toy.d_model));
    return ctx;
}

void require_single_approach(const std::string& approach) {
    if (approach != "cluster" && approach != "linkage" && approach != "single_token")
        throw std::invalid_argument("approach must be cluster, linkage, or single_token, got '" +
                                    approach + "'");
}

void sort_skips(std::vector<SkipRecord>& skips) {
    std::sort(skips.begin(), skips.end(), [](const SkipRecord& a, const SkipRecord& b) {
        return std::tie(a.category, a.prompt_id, a.layer, a.stage, a.reason) <
               std::tie(b.category, b.prompt_id, b.layer, b.stage, b.reason);
    });
}

}  // namespace

std::vector<AlignmentRecord> run_alignment(const RunConfig& cfg, std::vector<SkipRecord>* skips,
                                           Warnings* warnings) {
    const LoadedCorpus corpus = load_and_sample(cfg);
    if (warnings)
        warnings->insert(warnings->end(), corpus.warnings.begin(), corpus.warnings.end());
    const PromptContext ctx = make_context(cfg);

    std::vector<AlignmentRecord> records;
    for (const PromptWork& work : corpus.work) {
        std::vector<SkipRecord> local_skips;
        Warnings local_warnings;
        AlignmentRecord rec;
        rec.prompt_id = work.dp.id;
        rec.category = work.category;

        // Alignment is reported even for prompts the pipeline would skip;
        // the skip log says why downstream stages drop them.
        const std::optional<Prepared> prep =
            prepare_prompt(ctx, work, local_skips, local_warnings);
        if (prep) {
            rec.sl = prep->sl;
            rec.pos = prep->align.pos;
            rec.anchor_token = prep->align.anchor_token;
            rec.anchor_concept = prep->align.anchor_concept;
            records.push_back(std::move(rec));
        }
        if (skips) skips->insert(skips->end(), local_skips.begin(), local_skips.end());
        if (warnings)
            warnings->insert(warnings->end(), local_warnings.begin(), local_warnings.end());
    }
    if (skips) sort_skips(*skips);
    return records;
}

std::vector<SubgroupRecord> collect_subgroups(const RunConfig& cfg, const std::string& approach,
                                              std::vector<SkipRecord>* skips, Warnings* warnings) {
    require_single_approach(approach);
    const LoadedCorpus corpus = load_and_sample(cfg);
    if (warnings)
        warnings->insert(warnings->end(), corpus.warnings.begin(), corpus.warnings.end());
    const PromptContext ctx = make_context(cfg);

    std::vector<SubgroupRecord> records;
    for (const PromptWork& work : corpus.work) {
        std::vector<SkipRecord> local_skips;
        Warnings local_warnings;
        const std::optional<Prepared> prep =
            prepare_prompt(ctx, work, local_skips, local_warnings);
        if (prep) {
            std::vector<SubgroupRecord> sub = prompt_subgroups(ctx, *prep, approach, local_warnings);
            records.insert(records.end(), std::make_move_iterator(sub.begin()),
                           std::make_move_iterator(sub.end()));
        }
        if (skips) skips->insert(skips->end(), local_skips.begin(), local_skips.end());
        if (warnings)
            warnings->insert(warnings->end(), local_warnings.begin(), local_warnings.end());
    }
    if (skips) sort_skips(*skips);
    return records;
}

SteeringRun run_steering(const RunConfig& cfg, const std::string& approach,
                         const fs::path& plans_dir) {
    require_single_approach(approach);
    const LoadedCorpus corpus = load_and_sample(cfg);
    const PromptContext ctx = make_context(cfg);

    if (!plans_dir.empty()) {
        std::error_code ec;
        fs::create_directories(plans_dir, ec);
        if (ec) throw IoError("cannot create plans directory " + plans_dir.string() + ": " +
                              ec.message());
    }

    struct Slot {
        std::vector<GenerationRecord> generations;
        std::vector<SkipRecord> skips;
        Warnings warnings;
    };
    std::vector<Slot> slots(corpus.work.size());

    parallel_for(corpus.work.size(), cfg.workers, [&](size_t i) {
        const PromptWork& work = corpus.work[i];
        Slot& slot = slots[i];
        try {
            const std::optional<Prepared> prep =
                prepare_prompt(ctx, work, slot.skips, slot.warnings);
            if (!prep) return;

            const std::vector<int> baseline_seq =
                generate(ctx.lab.model, ctx.lab.sae, prep->tokens, SteeringPlan{}, cfg.max_new);
            const std::string baseline_text = toy_detokenize(
                std::vector<int>(baseline_seq.begin() + prep->tokens.size(), baseline_seq.end()));
            if (baseline_text.empty()) {
                slot.skips.push_back(skip(work, -1, "steering", "no room to generate"));
                return;
            }

            const std::vector<SubgroupRecord> subs =
                prompt_subgroups(ctx, *prep, approach, slot.warnings);
            if (subs.empty()) {
                slot.skips.push_back(
                    skip(work, -1, "subgrouping", "no steerable selections at any layer"));
                return;
            }

            for (const SubgroupRecord& rec : subs) {
                const int k = rec.selection.layer;
                SteeringPlan plan;
                for (int f : rec.selection.chosen)
                    plan.entries.push_back(
                        PlanEntry{k, f, cfg.alpha, feature_scale(prep->acts[k], f)});
                if (!plans_dir.empty())
                    export_plan(plan, plans_dir / (sanitize_id(work.dp.id) + "_L" +
                                                   std::to_string(k) + "_A" +
                                                   std::to_string(rec.selection.anchor) + ".json"));

                const std::vector<int> steered_seq =
                    generate(ctx.lab.model, ctx.lab.sae, prep->tokens, plan, cfg.max_new);
                GenerationRecord gen;
                gen.prompt_id = work.dp.id;
                gen.category = work.category;
                gen.layer = k;
                gen.method = approach;
                gen.anchor = rec.selection.anchor;
                gen.prompt_text = work.dp.prompt;
                gen.baseline_text = baseline_text;
                gen.steered_text = toy_detokenize(std::vector<int>(
                    steered_seq.begin() + prep->tokens.size(), steered_seq.end()));
                slot.generations.push_back(std::move(gen));
            }
        } catch (const std::exception& e) {
            slot.skips.push_back(skip(work, -1, "internal", e.what()));
        }
    });

    SteeringRun out;
    out.warnings = corpus.warnings;
    for (Slot& slot : slots) {
        out.generations.insert(out.generations.end(),
                               std::make_move_iterator(slot.generations.begin()),
                               std::make_move_iterator(slot.generations.end()));
        out.skips.insert(out.skips.end(), slot.skips.begin(), slot.skips.end());
        out.warnings.insert(out.warnings.end(), slot.warnings.begin(), slot.warnings.end());
    }
    std::sort(out.generations.begin(), out.generations.end(),
              [](const GenerationRecord& a, const GenerationRecord& b) {
                  return std::tie(a.category, a.prompt_id, a.layer, a.method, a.anchor) <
                         std::tie(b.category, b.prompt_id, b.layer, b.method, b.anchor);
              });
    sort_skips(out.skips);
    out.categories = corpus.categories;
    return out;
}

JudgeRun judge_generations(const RunConfig& cfg, const std::vector<GenerationRecord>& records) {
    std::vector<std::string> lexicon;
    if (cfg.judge_kind == "mock") lexicon = load_lexicon(cfg.lexicon);
    const std::unique_ptr<Judge> judge = make_judge(cfg.judge_kind, lexicon, cfg.remote);
    const int judge_workers = cfg.judge_kind == "remote" ? 4 : 1;

    // Baseline is judged exactly once per prompt and reused across layers.
    struct Baseline {
        std::string prompt_id;
        std::string category;
        std::string prompt_text;
        std::string response;
        int score = 0;
        std::string error;
    };
    std::vector<Baseline> baselines;
    std::map<std::string, size_t> baseline_index;
    for (const GenerationRecord& r : records) {
        if (baseline_index.count(r.prompt_id)) continue;
        baseline_index[r.prompt_id] = baselines.size();
        baselines.push_back(Baseline{r.prompt_id, r.category, r.prompt_text, r.baseline_text, 0, ""});
    }
    parallel_for(baselines.size(), judge_workers, [&](size_t i) {
        Baseline& b = baselines[i];
        try {
            b.score = judge->score(JudgeRequest{b.prompt_text, b.response}).value;
        } catch (const std::exception& e) {
            b.error = e.what();
        }
    });

    struct Slot {
        std::optional<JudgedOutcome> outcome;
        std::optional<SkipRecord> skip;
    };
    std::vector<Slot> slots(records.size());
    parallel_for(records.size(), judge_workers, [&](size_t i) {
        const GenerationRecord& r = records[i];
        const Baseline& b = baselines[baseline_index.at(r.prompt_id)];
        if (!b.error.empty()) return;  // one prompt-level skip covers all records
        try {
            const int steered = judge->score(JudgeRequest{r.prompt_text, r.steered_text}).value;
            slots[i].outcome = JudgedOutcome{r.prompt_id, r.category, r.layer,
                                             r.method,    r.anchor,   b.score, steered};
        } catch (const std::exception& e) {
            slots[i].skip = SkipRecord{r.prompt_id, r.category, r.layer, "judge", e.what()};
        }
    });

    JudgeRun out;
    for (const Baseline& b : baselines)
        if (!b.error.empty())
            out.skips.push_back(SkipRecord{b.prompt_id, b.category, -1, "judge",
                                           "baseline: " + b.error});
    for (Slot& slot : slots) {
        if (slot.outcome) out.outcomes.push_back(std::move(*slot.outcome));
        if (slot.skip) out.skips.push_back(std::move(*slot.skip));
    }
    std::sort(out.outcomes.begin(), out.outcomes.end(),
              [](const JudgedOutcome& a, const JudgedOutcome& b) {
                  return std::tie(a.category, a.prompt_id, a.layer, a.method, a.anchor) <
                         std::tie(b.category, b.prompt_id, b.layer, b.method, b.anchor);
              });
    sort_skips(out.skips);
    return out;
}

RunResult run_experiment(const RunConfig& cfg, const std::string& approach) {
    SteeringRun steering = run_steering(cfg, approach);
    JudgeRun judged = judge_generations(cfg, steering.generations);

    RunResult out;
    out.outcomes = std::move(judged.outcomes);
    out.skips = std::move(steering.skips);
    out.skips.insert(out.skips.end(), judged.skips.begin(), judged.skips.end());
    sort_skips(out.skips);
    out.warnings = std::move(steering.warnings);
    out.heatmap = build_heatmap(out.outcomes, steering.categories, cfg.toy.layers);
    return out;
}

void write_skips(const std::vector<SkipRecord>& skips, const fs::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    for (const SkipRecord& s : skips) {
        ojson j;
        j["prompt_id"] = s.prompt_id;
        j["category"] = s.category;
        j["layer"] = s.layer;
        j["stage"] = s.stage;
        j["reason"] = s.reason;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

void write_alignment_records(const std::vector<AlignmentRecord>& records, const fs::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    for (const AlignmentRecord& r : records) {
        ojson j;
        j["prompt_id"] = r.prompt_id;
        j["category"] = r.category;
        j["sl"] = r.sl;
        j["num"] = static_cast<int>(r.pos.size());
        j["pos"] = r.pos;
        j["anchor_token"] = r.anchor_token;
        j["anchor_concept"] = r.anchor_concept;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

void write_generations(const std::vector<GenerationRecord>& records, const fs::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    for (const GenerationRecord& r : records) {
        ojson j;
        j["prompt_id"] = r.prompt_id;
        j["category"] = r.category;
        j["layer"] = r.layer;
        j["method"] = r.method;
        j["anchor"] = r.anchor;
        j["prompt_text"] = r.prompt_text;
        j["baseline_text"] = r.baseline_text;
        j["steered_text"] = r.steered_text;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

std::vector<GenerationRecord> read_generations(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open generations: " + file.string());
    std::vector<GenerationRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const ojson j = ojson::parse(line);
            GenerationRecord r;
            r.prompt_id = j.at("prompt_id").get<std::string>();
            r.category = j.at("category").get<std::string>();
            r.layer = j.at("layer").get<int>();
            r.method = j.at("method").get<std::string>();
            r.anchor = j.at("anchor").get<int>();
            r.prompt_text = j.at("prompt_text").get<std::string>();
            r.baseline_text = j.at("baseline_text").get<std::string>();
            r.steered_text = j.at("steered_text").get<std::string>();
            records.push_back(std::move(r));
        } catch (const ojson::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace featsteer
