#pragma once

// Aggregation of judged outcomes into category x layer steerability counts,
// plus the report files (heatmap.csv, heatmap.svg, outcomes.jsonl).

#include <filesystem>
#include <string>
#include <vector>

#include "featsteer/common.hpp"

namespace featsteer {

struct JudgedOutcome {
    std::string prompt_id;
    std::string category;
    int layer = 0;
    std::string method;
    int anchor = 0;
    int baseline = 1;  // 1..5
    int steered = 1;   // 1..5
};

// cells[c][k] = number of prompts in category c whose steered score beat the
// baseline at layer k (strict inequality; at most once per prompt per cell).
struct SteerabilityHeatmap {
    std::vector<std::string> categories;  // row order
    int layers = 0;
    std::vector<int> cells;  // categories.size() x layers, row-major

    int at(int c, int k) const { return cells[static_cast<size_t>(c) * layers + k]; }
    int& at(int c, int k) { return cells[static_cast<size_t>(c) * layers + k]; }

    std::vector<int> category_totals() const;
    std::vector<int> layer_totals() const;
};

SteerabilityHeatmap build_heatmap(const std::vector<JudgedOutcome>& outcomes,
                                  const std::vector<std::string>& categories, int layers);

// Row order = sorted distinct categories, layers = max layer + 1.
SteerabilityHeatmap build_heatmap(const std::vector<JudgedOutcome>& outcomes);

void write_outcomes(const std::vector<JudgedOutcome>& outcomes, const std::filesystem::path& file);
std::vector<JudgedOutcome> read_outcomes(const std::filesystem::path& file);

void write_heatmap_csv(const SteerabilityHeatmap& h, const std::filesystem::path& file);
SteerabilityHeatmap load_heatmap_csv(const std::filesystem::path& file);

void write_heatmap_svg(const SteerabilityHeatmap& h, const std::filesystem::path& file);

// Writes heatmap.csv, heatmap.svg and outcomes.jsonl under dir.
void emit_report(const SteerabilityHeatmap& h, const std::vector<JudgedOutcome>& outcomes,
                 const std::filesystem::path& dir);

}  // namespace featsteer
