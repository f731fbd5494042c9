#pragma once

// Adversarial prompt/response dataset: JSONL loading, label validation,
// and the seeded single-category sampler.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "featsteer/common.hpp"

namespace featsteer {

struct DataPoint {
    std::string id;
    std::string prompt;
    std::string response;
    std::set<std::string> categories;
    bool is_safe = false;
};

// The 14 harm-category labels used when the run config does not override them.
const std::vector<std::string>& default_category_vocabulary();

struct LoadResult {
    std::vector<DataPoint> records;   // in file order
    int skipped = 0;                  // malformed or rejected lines
    std::vector<std::string> diagnostics;
};

LoadResult load_dataset(const std::filesystem::path& file,
                        const std::vector<std::string>& category_vocabulary);

struct SampledCorpus {
    std::map<std::string, std::vector<DataPoint>> per_category;
    int per_category_count = 0;

    size_t total() const;
};

// Keeps unsafe records with exactly one category, then takes the first
// per_category of each category under a seeded deterministic shuffle.
// Categories with fewer eligible records keep all of them.
SampledCorpus sample_single_category(const std::vector<DataPoint>& data, int per_category,
                                     uint64_t seed, Warnings* warnings = nullptr);

}  // namespace featsteer
