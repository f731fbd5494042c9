#include "featsteer/cli.hpp"

#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "featsteer/pipeline.hpp"

namespace fs = std::filesystem;

namespace featsteer {

namespace {

struct Overrides {
    std::optional<std::string> dataset, subspaces, output_dir, approach, source, bundle_dir;
    std::optional<std::string> judge_kind, lexicon;
    std::optional<uint64_t> seed;
    std::optional<int> per_category, workers, alignment_layer, n_clusters, max_size, top_k,
        anchor_k, max_new;
    std::optional<double> alpha;
};

struct CommonArgs {
    std::string config_path;
    Overrides over;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration (TOML)")->required();
    cmd->add_option("--dataset", args.over.dataset, "override run.dataset");
    cmd->add_option("--subspaces", args.over.subspaces, "override run.subspaces");
    cmd->add_option("--output-dir", args.over.output_dir, "override run.output_dir");
    cmd->add_option("--approach", args.over.approach,
                    "override run.approach (cluster|linkage|single_token|all)");
    cmd->add_option("--seed", args.over.seed, "override run.seed");
    cmd->add_option("--per-category", args.over.per_category, "override run.per_category");
    cmd->add_option("--workers", args.over.workers, "override run.workers");
    cmd->add_option("--source", args.over.source, "override activations.source (toy|bundle)");
    cmd->add_option("--bundle-dir", args.over.bundle_dir, "override activations.bundle_dir");
    cmd->add_option("--alignment-layer", args.over.alignment_layer, "override alignment.layer");
    cmd->add_option("--n-clusters", args.over.n_clusters, "override subgrouping.n_clusters");
    cmd->add_option("--max-size", args.over.max_size, "override subgrouping.max_size");
    cmd->add_option("--top-k", args.over.top_k, "override subgrouping.top_k");
    cmd->add_option("--anchor-k", args.over.anchor_k, "override subgrouping.anchor_k");
    cmd->add_option("--alpha", args.over.alpha, "override steering.alpha");
    cmd->add_option("--max-new", args.over.max_new, "override steering.max_new");
    cmd->add_option("--judge", args.over.judge_kind, "override judge.kind (mock|remote)");
    cmd->add_option("--lexicon", args.over.lexicon, "override judge.lexicon");
}

RunConfig effective_config(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    const Overrides& o = args.over;
    if (o.dataset) cfg.dataset = *o.dataset;
    if (o.subspaces) cfg.subspaces = *o.subspaces;
    if (o.output_dir) cfg.output_dir = *o.output_dir;
    if (o.approach) cfg.approach = *o.approach;
    if (o.source) {
        if (*o.source == "toy")
            cfg.source = ActivationSource::toy;
        else if (*o.source == "bundle")
            cfg.source = ActivationSource::bundle;
        else
            throw ConfigError("activations.source must be toy or bundle, got '" + *o.source + "'");
    }
    if (o.bundle_dir) cfg.bundle_dir = *o.bundle_dir;
    if (o.judge_kind) cfg.judge_kind = *o.judge_kind;
    if (o.lexicon) cfg.lexicon = *o.lexicon;
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.toy.seed = *o.seed;
    }
    if (o.per_category) cfg.per_category = *o.per_category;
    if (o.workers) cfg.workers = *o.workers;
    if (o.alignment_layer) cfg.alignment_layer = *o.alignment_layer;
    if (o.n_clusters) cfg.n_clusters = *o.n_clusters;
    if (o.max_size) cfg.max_size = *o.max_size;
    if (o.top_k) cfg.top_k = *o.top_k;
    if (o.anchor_k) cfg.anchor_k = *o.anchor_k;
    if (o.alpha) cfg.alpha = *o.alpha;
    if (o.max_new) cfg.max_new = *o.max_new;
    validate_run_config(cfg);
    return cfg;
}

std::vector<std::string> approaches_of(const RunConfig& cfg) {
    if (cfg.approach == "all") return {"cluster", "linkage", "single_token"};
    return {cfg.approach};
}

void print_warnings(const Warnings& warnings) {
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

int cmd_run(const CommonArgs& args) {
    const RunConfig cfg = effective_config(args);
    std::vector<JudgedOutcome> all_outcomes;
    std::set<std::string> all_categories;

    for (const std::string& approach : approaches_of(cfg)) {
        const RunResult result = run_experiment(cfg, approach);
        print_warnings(result.warnings);

        const fs::path dir = cfg.output_dir / approach;
        emit_report(result.heatmap, result.outcomes, dir);
        write_skips(result.skips, dir / "skips.jsonl");

        all_outcomes.insert(all_outcomes.end(), result.outcomes.begin(), result.outcomes.end());
        for (const std::string& c : result.heatmap.categories) all_categories.insert(c);

        const std::vector<int> per_layer = result.heatmap.layer_totals();
        std::cout << "approach=" << approach << " outcomes=" << result.outcomes.size()
                  << " skipped=" << result.skips.size() << " layer_totals=[";
        for (size_t k = 0; k < per_layer.size(); ++k)
            std::cout << (k ? "," : "") << per_layer[k];
        std::cout << "] -> " << dir.string() << "\n";
    }

    if (cfg.approach == "all") {
        // Overall view: a prompt counts once per (category, layer) if any
        // approach beat its baseline there.
        const SteerabilityHeatmap combined = build_heatmap(
            all_outcomes,
            std::vector<std::string>(all_categories.begin(), all_categories.end()),
            cfg.toy.layers);
        emit_report(combined, all_outcomes, cfg.output_dir / "combined");
        std::cout << "combined -> " << (cfg.output_dir / "combined").string() << "\n";
    }
    return 0;
}

int cmd_align(const CommonArgs& args) {
    const RunConfig cfg = effective_config(args);
    std::vector<SkipRecord> skips;
    Warnings warnings;
    const std::vector<AlignmentRecord> records = run_alignment(cfg, &skips, &warnings);
    print_warnings(warnings);

    ensure_dir(cfg.output_dir);
    write_alignment_records(records, cfg.output_dir / "alignment.jsonl");
    write_skips(skips, cfg.output_dir / "skips.jsonl");
    std::cout << "aligned=" << records.size() << " skipped=" << skips.size() << " -> "
              << (cfg.output_dir / "alignment.jsonl").string() << "\n";
    return 0;
}

int cmd_group(const CommonArgs& args) {
    const RunConfig cfg = effective_config(args);
    std::vector<SubgroupRecord> records;
    std::vector<SkipRecord> skips;
    Warnings warnings;
    for (const std::string& approach : approaches_of(cfg)) {
        const std::vector<SubgroupRecord> sub = collect_subgroups(cfg, approach, &skips, &warnings);
        records.insert(records.end(), sub.begin(), sub.end());
    }
    print_warnings(warnings);

    ensure_dir(cfg.output_dir);
    write_subgroup_dump(records, cfg.output_dir / "subgroups.jsonl");
    write_skips(skips, cfg.output_dir / "skips.jsonl");
    std::cout << "subgroups=" << records.size() << " skipped=" << skips.size() << " -> "
              << (cfg.output_dir / "subgroups.jsonl").string() << "\n";
    return 0;
}

int cmd_steer(const CommonArgs& args) {
    const RunConfig cfg = effective_config(args);
    for (const std::string& approach : approaches_of(cfg)) {
        const fs::path dir = cfg.output_dir / approach;
        ensure_dir(dir);
        const SteeringRun run = run_steering(cfg, approach, dir / "plans");
        print_warnings(run.warnings);
        write_generations(run.generations, dir / "generations.jsonl");
        write_skips(run.skips, dir / "skips.jsonl");
        std::cout << "approach=" << approach << " generations=" << run.generations.size()
                  << " skipped=" << run.skips.size() << " -> " << dir.string() << "\n";
    }
    return 0;
}

int cmd_judge(const CommonArgs& args, const std::string& generations_path) {
    const RunConfig cfg = effective_config(args);
    const fs::path input = generations_path;
    const std::vector<GenerationRecord> records = read_generations(input);
    const JudgeRun run = judge_generations(cfg, records);

    const fs::path dir = input.parent_path().empty() ? fs::path(".") : input.parent_path();
    write_outcomes(run.outcomes, dir / "outcomes.jsonl");
    write_skips(run.skips, dir / "judge_skips.jsonl");
    std::cout << "outcomes=" << run.outcomes.size() << " skipped=" << run.skips.size() << " -> "
              << (dir / "outcomes.jsonl").string() << "\n";
    return 0;
}

int cmd_report(const std::string& outcomes_path, const std::string& out_dir, int layers) {
    const std::vector<JudgedOutcome> outcomes = read_outcomes(outcomes_path);
    SteerabilityHeatmap heatmap;
    if (layers > 0) {
        std::set<std::string> cats;
        for (const JudgedOutcome& o : outcomes) cats.insert(o.category);
        heatmap = build_heatmap(outcomes, std::vector<std::string>(cats.begin(), cats.end()),
                                layers);
    } else {
        heatmap = build_heatmap(outcomes);
    }
    emit_report(heatmap, outcomes, out_dir);
    std::cout << "rows=" << heatmap.categories.size() << " layers=" << heatmap.layers << " -> "
              << out_dir << "\n";
    return 0;
}

int cmd_ingest(const std::string& bundles_dir) {
    const fs::path root = bundles_dir;
    std::vector<fs::path> dirs;
    if (fs::exists(root / "manifest.json")) {
        dirs.push_back(root);
    } else if (fs::is_directory(root)) {
        for (const fs::directory_entry& e : fs::directory_iterator(root))
            if (e.is_directory() && fs::exists(e.path() / "manifest.json"))
                dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
    }
    if (dirs.empty()) {
        std::cerr << "error: no activation bundles under " << root.string() << "\n";
        return 1;
    }

    int failures = 0;
    for (const fs::path& dir : dirs) {
        try {
            const ActivationBundle b = read_activation_bundle(dir);
            std::cout << "ok " << dir.string() << " L=" << b.meta.layers << " sl=" << b.meta.sl
                      << " d_model=" << b.meta.d_model << " d_sae=" << b.meta.d_sae
                      << " num=" << b.meta.num << "\n";
        } catch (const std::exception& e) {
            std::cerr << "error: " << dir.string() << ": " << e.what() << "\n";
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Jailbreak-feature steering pipeline over SAE activations"};
    app.require_subcommand(1);

    CommonArgs run_args, align_args, group_args, steer_args, judge_args;
    std::string generations_path, outcomes_path, bundles_dir;
    std::string report_out = "report";
    int report_layers = 0;

    CLI::App* run = app.add_subcommand("run", "full pipeline: sample, align, group, steer, judge");
    add_common(run, run_args);
    CLI::App* align = app.add_subcommand("align", "alignment stage: pos sets and anchor tokens");
    add_common(align, align_args);
    CLI::App* group = app.add_subcommand("group", "subgrouping stage: dump subgroups/selections");
    add_common(group, group_args);
    CLI::App* steer = app.add_subcommand("steer", "steering stage: plans and generations");
    add_common(steer, steer_args);
    CLI::App* judge = app.add_subcommand("judge", "judge a generations file into outcomes");
    add_common(judge, judge_args);
    judge->add_option("--generations", generations_path, "generations.jsonl from the steer stage")
        ->required();
    CLI::App* report = app.add_subcommand("report", "rebuild heatmap files from outcomes");
    report->add_option("--outcomes", outcomes_path, "outcomes.jsonl")->required();
    report->add_option("--out", report_out, "report directory");
    report->add_option("--layers", report_layers, "force layer count (default: inferred)");
    CLI::App* ingest = app.add_subcommand("ingest", "validate activation bundles");
    ingest->add_option("--bundles", bundles_dir, "bundle directory (or parent of bundles)")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version exit 0; usage errors exit 2
    }

    try {
        if (run->parsed()) return cmd_run(run_args);
        if (align->parsed()) return cmd_align(align_args);
        if (group->parsed()) return cmd_group(group_args);
        if (steer->parsed()) return cmd_steer(steer_args);
        if (judge->parsed()) return cmd_judge(judge_args, generations_path);
        if (report->parsed()) return cmd_report(outcomes_path, report_out, report_layers);
        if (ingest->parsed()) return cmd_ingest(bundles_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace featsteer
