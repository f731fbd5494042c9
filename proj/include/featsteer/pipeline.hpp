#pragma once

// Orchestration: corpus -> alignment -> subgrouping -> steering -> judging,
// with a bounded worker pool over prompts and a deterministic reduction, so
// output files are byte-identical regardless of pool size.

#include <filesystem>
#include <string>
#include <vector>

#include "featsteer/config.hpp"
#include "featsteer/heatmap.hpp"
#include "featsteer/subgroups.hpp"

namespace featsteer {

// layer -1 marks a prompt-level skip.
struct SkipRecord {
    std::string prompt_id;
    std::string category;
    int layer = -1;
    std::string stage;
    std::string reason;
};

struct AlignmentRecord {
    std::string prompt_id;
    std::string category;
    int sl = 0;
    std::vector<int> pos;
    int anchor_token = -1;
    int anchor_concept = -1;
};

struct GenerationRecord {
    std::string prompt_id;
    std::string category;
    int layer = 0;
    std::string method;
    int anchor = 0;
    std::string prompt_text;
    std::string baseline_text;
    std::string steered_text;
};

struct SteeringRun {
    std::vector<GenerationRecord> generations;
    std::vector<SkipRecord> skips;
    Warnings warnings;
    std::vector<std::string> categories;  // sampled categories, heatmap row order
};

struct JudgeRun {
    std::vector<JudgedOutcome> outcomes;
    std::vector<SkipRecord> skips;
};

struct RunResult {
    std::vector<JudgedOutcome> outcomes;
    std::vector<SkipRecord> skips;
    SteerabilityHeatmap heatmap;
    Warnings warnings;
};

// Alignment stage only: pos sets and anchor tokens for every sampled prompt.
std::vector<AlignmentRecord> run_alignment(const RunConfig& cfg, std::vector<SkipRecord>* skips,
                                           Warnings* warnings = nullptr);

// Subgrouping stage only: every subgroup + selection the given approach
// would steer with, in deterministic (prompt, layer, anchor) order.
std::vector<SubgroupRecord> collect_subgroups(const RunConfig& cfg, const std::string& approach,
                                              std::vector<SkipRecord>* skips,
                                              Warnings* warnings = nullptr);

// Steering stage: baseline + steered generations for one approach. When
// plans_dir is non-empty, every steering plan is exported there.
SteeringRun run_steering(const RunConfig& cfg, const std::string& approach,
                         const std::filesystem::path& plans_dir = {});

// Judging stage: baseline judged once per prompt, steered per record.
JudgeRun judge_generations(const RunConfig& cfg, const std::vector<GenerationRecord>& records);

// Full pipeline for one approach (approach must not be "all").
RunResult run_experiment(const RunConfig& cfg, const std::string& approach);

void write_skips(const std::vector<SkipRecord>& skips, const std::filesystem::path& file);
void write_alignment_records(const std::vector<AlignmentRecord>& records,
                             const std::filesystem::path& file);
void write_generations(const std::vector<GenerationRecord>& records,
                       const std::filesystem::path& file);
std::vector<GenerationRecord> read_generations(const std::filesystem::path& file);

}  // namespace featsteer
