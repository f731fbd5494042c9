#pragma once

// Run configuration: a small TOML subset (sections, scalars, flat arrays,
// '#' comments) parsed into typed tables, and the RunConfig consumed by the
// pipeline. Flag overrides are applied by the CLI after the file loads.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "featsteer/common.hpp"
#include "featsteer/distance.hpp"
#include "featsteer/judge.hpp"
#include "featsteer/linkage.hpp"
#include "featsteer/toy_model.hpp"

namespace featsteer {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TomlValue {
    enum class Kind { string, integer, real, boolean, array };
    Kind kind = Kind::string;
    std::string str;
    int64_t integer = 0;
    double real = 0.0;
    bool boolean = false;
    std::vector<TomlValue> array;
};

class TomlTable {
  public:
    void set(const std::string& section, const std::string& key, TomlValue v);
    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<std::string> get_string_array(const std::string& section, const std::string& key,
                                              std::vector<std::string> fallback) const;

  private:
    const TomlValue* find(const std::string& section, const std::string& key) const;
    std::map<std::string, std::map<std::string, TomlValue>> sections_;
};

TomlTable parse_toml(const std::string& text, const std::string& origin);
TomlTable parse_toml_file(const std::filesystem::path& file);

enum class ActivationSource { toy, bundle };

struct RunConfig {
    // [run]
    std::filesystem::path dataset;
    std::filesystem::path subspaces;
    std::filesystem::path output_dir = "out";
    std::string approach = "all";  // cluster | linkage | single_token | all
    uint64_t seed = 0;
    int per_category = 20;
    int workers = 4;
    std::vector<std::string> categories;  // empty = full vocabulary

    // [activations]
    ActivationSource source = ActivationSource::toy;
    std::filesystem::path bundle_dir;

    // [toy]
    ToyModelConfig toy;

    // [alignment]
    int alignment_layer = 20;
    bool normalize_subspaces = false;

    // [subgrouping]
    int n_clusters = 128;
    int max_size = 50;
    int top_k = 3;
    int anchor_k = 2;
    Metric metric = Metric::euclidean;
    LinkCriterion cluster_criterion = LinkCriterion::ward;
    LinkCriterion subgroup_criterion = LinkCriterion::average;
    bool active_only = true;

    // [steering]
    double alpha = 4.0;
    int max_new = 16;

    // [judge]
    std::string judge_kind = "mock";
    std::filesystem::path lexicon;
    // remote.auth_token falls back to $FEATSTEER_JUDGE_TOKEN so credentials
    // can stay out of config files.
    RemoteJudgeConfig remote;
};

// Parses the file into a RunConfig without validating paths; the CLI applies
// flag overrides first, then calls validate_run_config.
RunConfig load_run_config(const std::filesystem::path& file);
RunConfig run_config_from_table(const TomlTable& t, const std::filesystem::path& origin);

// Throws ConfigError naming the offending field.
void validate_run_config(const RunConfig& cfg);

}  // namespace featsteer
