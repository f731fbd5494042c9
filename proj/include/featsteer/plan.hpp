#pragma once

// Steering plans: which decoder directions get injected where, and at what
// strength. The JSON file is the contract consumed by external runners:
//   { "version": 1, "mode": "additive",
//     "entries": [{"layer": int, "feature": int, "alpha": float, "scale": float}, ...] }

#include <filesystem>
#include <vector>

#include "featsteer/common.hpp"

namespace featsteer {

struct PlanEntry {
    int layer = 0;
    int feature = 0;
    double alpha = 0.0;  // dimensionless amplification factor
    double scale = 1.0;  // reference activation magnitude for the feature
};

// mode is always additive; the field exists on disk so runners can reject
// plans they do not understand.
struct SteeringPlan {
    std::vector<PlanEntry> entries;

    bool empty() const { return entries.empty(); }
};

void export_plan(const SteeringPlan& plan, const std::filesystem::path& file);
SteeringPlan read_plan(const std::filesystem::path& file);

}  // namespace featsteer
