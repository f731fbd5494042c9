#include "featsteer/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "json.hpp"

using nlohmann::json;

namespace featsteer {

namespace {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// std::shuffle's draw sequence is implementation-defined, so sampling uses
// an explicit Fisher-Yates with rejection-sampled bounds to stay identical
// across standard libraries.
void deterministic_shuffle(std::vector<DataPoint>& v, uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (size_t i = v.size(); i > 1; --i) {
        const uint64_t bound = i;
        const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % bound;
        uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(v[i - 1], v[r % bound]);
    }
}

}  // namespace

const std::vector<std::string>& default_category_vocabulary() {
    static const std::vector<std::string> labels = {
        "animal_abuse",
        "child_abuse",
        "controversial_topics,politics",
        "discrimination,stereotype,injustice",
        "drug_abuse,weapons,banned_substance",
        "financial_crime,property_crime,theft",
        "hate_speech,offensive_language",
        "misinformation_regarding_ethics,laws_and_safety",
        "non_violent_unethical_behavior",
        "privacy_violation",
        "self_harm",
        "sexually_explicit,adult_content",
        "terrorism,organized_crime",
        "violence,aiding_and_abetting,incitement",
    };
    return labels;
}

LoadResult load_dataset(const std::filesystem::path& file,
                        const std::vector<std::string>& category_vocabulary) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open dataset: " + file.string());

    const std::set<std::string> vocab(category_vocabulary.begin(), category_vocabulary.end());

    LoadResult result;
    std::set<std::string> seen_ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        auto reject = [&](const std::string& why) {
            ++result.skipped;
            result.diagnostics.push_back(file.filename().string() + ":" + std::to_string(lineno) + ": " + why);
        };

        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            reject("malformed JSON");
            continue;
        }

        DataPoint d;
        d.id = j.value("id", "line-" + std::to_string(lineno));
        if (!j.contains("prompt") || !j["prompt"].is_string() ||
            !j.contains("response") || !j["response"].is_string() ||
            !j.contains("is_safe") || !j["is_safe"].is_boolean() ||
            !j.contains("category")) {
            reject("missing or mistyped field");
            continue;
        }
        d.prompt = j["prompt"].get<std::string>();
        d.response = j["response"].get<std::string>();
        d.is_safe = j["is_safe"].get<bool>();

        // category comes either as {label: bool} or as [label, ...]
        const json& cat = j["category"];
        bool bad_label = false;
        if (cat.is_object()) {
            for (auto it = cat.begin(); it != cat.end(); ++it) {
                if (!it.value().is_boolean()) {
                    bad_label = true;
                    break;
                }
                if (it.value().get<bool>()) d.categories.insert(it.key());
            }
        } else if (cat.is_array()) {
            for (const json& item : cat) {
                if (!item.is_string()) {
                    bad_label = true;
                    break;
                }
                d.categories.insert(item.get<std::string>());
            }
        } else {
            bad_label = true;
        }
        if (bad_label) {
            reject("category must be a label->bool map or a list of labels");
            continue;
        }

        bool unknown = false;
        for (const std::string& label : d.categories) {
            if (!vocab.count(label)) {
                reject("unknown category label '" + label + "'");
                unknown = true;
                break;
            }
        }
        if (unknown) continue;

        if (!seen_ids.insert(d.id).second) {
            reject("duplicate id '" + d.id + "'");
            continue;
        }
        result.records.push_back(std::move(d));
    }
    return result;
}

size_t SampledCorpus::total() const {
    size_t n = 0;
    for (const auto& [cat, list] : per_category) n += list.size();
    return n;
}

SampledCorpus sample_single_category(const std::vector<DataPoint>& data, int per_category,
                                     uint64_t seed, Warnings* warnings) {
    if (per_category < 1) throw std::invalid_argument("per_category must be >= 1");

    SampledCorpus out;
    out.per_category_count = per_category;

    std::map<std::string, std::vector<DataPoint>> eligible;
    for (const DataPoint& d : data) {
        if (d.is_safe || d.categories.size() != 1) continue;
        eligible[*d.categories.begin()].push_back(d);
    }

    for (auto& [category, list] : eligible) {
        // Per-category stream keyed by the label so sampling does not depend
        // on which other categories happen to be present.
        deterministic_shuffle(list, seed ^ fnv1a64(category));
        if (static_cast<int>(list.size()) > per_category) list.resize(per_category);
        if (static_cast<int>(list.size()) < per_category)
            warn(warnings, "category '" + category + "' has only " + std::to_string(list.size()) +
                               " eligible records (wanted " + std::to_string(per_category) + ")");
        out.per_category[category] = std::move(list);
    }
    return out;
}

}  // namespace featsteer
