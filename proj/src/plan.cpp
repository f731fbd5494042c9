#include "featsteer/plan.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

using nlohmann::json;

namespace featsteer {

void export_plan(const SteeringPlan& plan, const std::filesystem::path& file) {
    json entries = json::array();
    for (const PlanEntry& e : plan.entries) {
        if (!std::isfinite(e.alpha) || !std::isfinite(e.scale))
            throw std::invalid_argument("plan entry for feature " + std::to_string(e.feature) +
                                        " has non-finite alpha/scale");
        entries.push_back({{"layer", e.layer},
                           {"feature", e.feature},
                           {"alpha", e.alpha},
                           {"scale", e.scale}});
    }
    json j;
    j["version"] = 1;
    j["mode"] = "additive";
    j["entries"] = std::move(entries);

    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + file.string());
}

SteeringPlan read_plan(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open plan: " + file.string());

    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }

    try {
        if (j.at("version").get<int>() != 1)
            throw FormatError(file.string() + ": unsupported plan version");
        if (j.at("mode").get<std::string>() != "additive")
            throw FormatError(file.string() + ": unsupported plan mode '" +
                              j["mode"].get<std::string>() + "'");
        SteeringPlan plan;
        for (const json& e : j.at("entries")) {
            PlanEntry pe;
            pe.layer = e.at("layer").get<int>();
            pe.feature = e.at("feature").get<int>();
            pe.alpha = e.at("alpha").get<double>();
            pe.scale = e.at("scale").get<double>();
            if (!std::isfinite(pe.alpha) || !std::isfinite(pe.scale))
                throw FormatError(file.string() + ": non-finite alpha/scale");
            plan.entries.push_back(pe);
        }
        return plan;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
}

}  // namespace featsteer
