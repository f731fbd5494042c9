#include "featsteer/heatmap.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace featsteer {

namespace {

void check_score(int v, const std::string& what) {
    if (v < 1 || v > 5)
        throw FormatError(what + " score " + std::to_string(v) + " outside 1..5");
}

// Minimal CSV quoting; category labels legitimately contain commas.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> parse_csv_line(const std::string& line, const std::string& where) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw FormatError(where + ": unterminated quoted CSV field");
    fields.push_back(cur);
    return fields;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::vector<int> SteerabilityHeatmap::category_totals() const {
    std::vector<int> totals(categories.size(), 0);
    for (size_t c = 0; c < categories.size(); ++c)
        for (int k = 0; k < layers; ++k) totals[c] += at(static_cast<int>(c), k);
    return totals;
}

std::vector<int> SteerabilityHeatmap::layer_totals() const {
    std::vector<int> totals(layers, 0);
    for (size_t c = 0; c < categories.size(); ++c)
        for (int k = 0; k < layers; ++k) totals[k] += at(static_cast<int>(c), k);
    return totals;
}

SteerabilityHeatmap build_heatmap(const std::vector<JudgedOutcome>& outcomes,
                                  const std::vector<std::string>& categories, int layers) {
    SteerabilityHeatmap h;
    h.categories = categories;
    h.layers = layers;
    h.cells.assign(categories.size() * static_cast<size_t>(layers), 0);

    std::map<std::string, int> row;
    for (size_t c = 0; c < categories.size(); ++c) row[categories[c]] = static_cast<int>(c);

    // A prompt counts once per (category, layer) no matter how many anchors
    // were steered there.
    std::set<std::tuple<int, int, std::string>> counted;
    for (const JudgedOutcome& o : outcomes) {
        check_score(o.baseline, "baseline");
        check_score(o.steered, "steered");
        auto it = row.find(o.category);
        if (it == row.end())
            throw FormatError("outcome category '" + o.category + "' not in heatmap rows");
        if (o.layer < 0 || o.layer >= layers)
            throw FormatError("outcome layer " + std::to_string(o.layer) + " outside 0.." +
                              std::to_string(layers - 1));
        if (o.steered > o.baseline && counted.emplace(it->second, o.layer, o.prompt_id).second)
            ++h.at(it->second, o.layer);
    }
    return h;
}

SteerabilityHeatmap build_heatmap(const std::vector<JudgedOutcome>& outcomes) {
    std::set<std::string> cats;
    int layers = 0;
    for (const JudgedOutcome& o : outcomes) {
        cats.insert(o.category);
        layers = std::max(layers, o.layer + 1);
    }
    return build_heatmap(outcomes, std::vector<std::string>(cats.begin(), cats.end()), layers);
}

void write_outcomes(const std::vector<JudgedOutcome>& outcomes, const fs::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    for (const JudgedOutcome& o : outcomes) {
        ojson j;
        j["prompt_id"] = o.prompt_id;
        j["category"] = o.category;
        j["layer"] = o.layer;
        j["method"] = o.method;
        j["anchor"] = o.anchor;
        j["baseline"] = o.baseline;
        j["steered"] = o.steered;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

std::vector<JudgedOutcome> read_outcomes(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open outcomes: " + file.string());
    std::vector<JudgedOutcome> outcomes;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const ojson j = ojson::parse(line);
            JudgedOutcome o;
            o.prompt_id = j.at("prompt_id").get<std::string>();
            o.category = j.at("category").get<std::string>();
            o.layer = j.at("layer").get<int>();
            o.method = j.at("method").get<std::string>();
            o.anchor = j.at("anchor").get<int>();
            o.baseline = j.at("baseline").get<int>();
            o.steered = j.at("steered").get<int>();
            check_score(o.baseline, "baseline");
            check_score(o.steered, "steered");
            outcomes.push_back(std::move(o));
        } catch (const ojson::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return outcomes;
}

void write_heatmap_csv(const SteerabilityHeatmap& h, const fs::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out << "category";
    for (int k = 0; k < h.layers; ++k) out << ",layer" << k;
    out << "\n";
    for (size_t c = 0; c < h.categories.size(); ++c) {
        out << csv_field(h.categories[c]);
        for (int k = 0; k < h.layers; ++k) out << "," << h.at(static_cast<int>(c), k);
        out << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

SteerabilityHeatmap load_heatmap_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open heatmap csv: " + file.string());

    std::string line;
    if (!std::getline(in, line)) throw FormatError(file.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = parse_csv_line(line, file.string() + ":1");
    if (header.empty() || header[0] != "category")
        throw FormatError(file.string() + ": header must start with 'category'");
    const int layers = static_cast<int>(header.size()) - 1;
    for (int k = 0; k < layers; ++k)
        if (header[k + 1] != "layer" + std::to_string(k))
            throw FormatError(file.string() + ": unexpected header column '" + header[k + 1] + "'");

    SteerabilityHeatmap h;
    h.layers = layers;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = file.string() + ":" + std::to_string(lineno);
        const std::vector<std::string> fields = parse_csv_line(line, where);
        if (static_cast<int>(fields.size()) != layers + 1)
            throw FormatError(where + ": expected " + std::to_string(layers + 1) + " fields, got " +
                              std::to_string(fields.size()));
        h.categories.push_back(fields[0]);
        for (int k = 0; k < layers; ++k) {
            try {
                h.cells.push_back(std::stoi(fields[k + 1]));
            } catch (const std::exception&) {
                throw FormatError(where + ": non-integer cell '" + fields[k + 1] + "'");
            }
            if (h.cells.back() < 0) throw FormatError(where + ": negative cell");
        }
    }
    return h;
}

void write_heatmap_svg(const SteerabilityHeatmap& h, const fs::path& file) {
    const int cell = 34;
    const int rows = static_cast<int>(h.categories.size());
    size_t longest = 0;
    for (const std::string& c : h.categories) longest = std::max(longest, c.size());
    const int left = 16 + static_cast<int>(longest) * 8;
    const int top = 18;
    const int width = left + std::max(1, h.layers) * cell + 16;
    const int height = top + std::max(1, rows) * cell + 40;

    int max_count = 1;
    for (int v : h.cells) max_count = std::max(max_count, v);

    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"monospace\" font-size=\"12\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    for (int c = 0; c < rows; ++c) {
        const int y = top + c * cell;
        out << "<text x=\"" << left - 8 << "\" y=\"" << y + cell / 2 + 4
            << "\" text-anchor=\"end\">" << xml_escape(h.categories[c]) << "</text>\n";
        for (int k = 0; k < h.layers; ++k) {
            const int x = left + k * cell;
            const double t = static_cast<double>(h.at(c, k)) / max_count;
            const int g = static_cast<int>(255.0 - 215.0 * t);
            out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
                << cell << "\" fill=\"rgb(255," << g << "," << g
                << ")\" stroke=\"#888\" stroke-width=\"1\"/>\n";
            out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
                << "\" text-anchor=\"middle\">" << h.at(c, k) << "</text>\n";
        }
    }
    for (int k = 0; k < h.layers; ++k)
        out << "<text x=\"" << left + k * cell + cell / 2 << "\" y=\"" << top + rows * cell + 16
            << "\" text-anchor=\"middle\">" << k << "</text>\n";
    out << "<text x=\"" << left + std::max(1, h.layers) * cell / 2 << "\" y=\""
        << top + rows * cell + 34 << "\" text-anchor=\"middle\">layer</text>\n";
    out << "</svg>\n";
    if (!out) throw IoError("short write: " + file.string());
}

void emit_report(const SteerabilityHeatmap& h, const std::vector<JudgedOutcome>& outcomes,
                 const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    write_heatmap_csv(h, dir / "heatmap.csv");
    write_heatmap_svg(h, dir / "heatmap.svg");
    write_outcomes(outcomes, dir / "outcomes.jsonl");
}

}  // namespace featsteer
