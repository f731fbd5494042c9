#include "featsteer/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace featsteer {

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Strips an unquoted '#' comment; quotes are the only escape-free strings in
// this subset, so a '#' inside them is content.
std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

TomlValue parse_scalar(const std::string& raw, const std::string& where) {
    TomlValue v;
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
        v.kind = TomlValue::Kind::string;
        std::string out;
        for (size_t i = 1; i + 1 < raw.size(); ++i) {
            if (raw[i] == '\\' && i + 2 < raw.size()) {
                const char n = raw[i + 1];
                if (n == '"' || n == '\\') {
                    out += n;
                    ++i;
                    continue;
                }
                if (n == 'n') {
                    out += '\n';
                    ++i;
                    continue;
                }
                if (n == 't') {
                    out += '\t';
                    ++i;
                    continue;
                }
            }
            out += raw[i];
        }
        v.str = std::move(out);
        return v;
    }
    if (raw == "true" || raw == "false") {
        v.kind = TomlValue::Kind::boolean;
        v.boolean = raw == "true";
        return v;
    }
    if (raw.empty()) throw FormatError(where + ": empty value");

    const bool has_dot = raw.find_first_of(".eE") != std::string::npos;
    try {
        size_t used = 0;
        if (has_dot) {
            v.kind = TomlValue::Kind::real;
            v.real = std::stod(raw, &used);
        } else {
            v.kind = TomlValue::Kind::integer;
            v.integer = std::stoll(raw, &used, 10);
        }
        if (used != raw.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw FormatError(where + ": cannot parse value '" + raw + "'");
    }
    return v;
}

// Splits a [v1, v2, ...] body at top-level commas, respecting quotes.
TomlValue parse_value(const std::string& raw, const std::string& where) {
    if (!raw.empty() && raw.front() == '[') {
        if (raw.back() != ']') throw FormatError(where + ": unterminated array");
        TomlValue v;
        v.kind = TomlValue::Kind::array;
        std::string body = raw.substr(1, raw.size() - 2);
        std::string cur;
        bool quoted = false;
        auto flush = [&]() {
            const std::string item = trim(cur);
            if (!item.empty()) v.array.push_back(parse_scalar(item, where));
            cur.clear();
        };
        for (char c : body) {
            if (c == '"') quoted = !quoted;
            if (c == ',' && !quoted) {
                flush();
                continue;
            }
            cur += c;
        }
        flush();
        return v;
    }
    return parse_scalar(raw, where);
}

std::string kind_name(TomlValue::Kind k) {
    switch (k) {
        case TomlValue::Kind::string: return "string";
        case TomlValue::Kind::integer: return "integer";
        case TomlValue::Kind::real: return "float";
        case TomlValue::Kind::boolean: return "bool";
        default: return "array";
    }
}

}  // namespace

void TomlTable::set(const std::string& section, const std::string& key, TomlValue v) {
    sections_[section][key] = std::move(v);
}

bool TomlTable::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

const TomlValue* TomlTable::find(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

std::string TomlTable::get_string(const std::string& section, const std::string& key,
                                  const std::string& fallback) const {
    const TomlValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != TomlValue::Kind::string)
        throw ConfigError(section + "." + key + " must be a string, got " + kind_name(v->kind));
    return v->str;
}

int64_t TomlTable::get_int(const std::string& section, const std::string& key,
                           int64_t fallback) const {
    const TomlValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != TomlValue::Kind::integer)
        throw ConfigError(section + "." + key + " must be an integer, got " + kind_name(v->kind));
    return v->integer;
}

double TomlTable::get_double(const std::string& section, const std::string& key,
                             double fallback) const {
    const TomlValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind == TomlValue::Kind::integer) return static_cast<double>(v->integer);
    if (v->kind != TomlValue::Kind::real)
        throw ConfigError(section + "." + key + " must be a number, got " + kind_name(v->kind));
    return v->real;
}

bool TomlTable::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const TomlValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != TomlValue::Kind::boolean)
        throw ConfigError(section + "." + key + " must be true/false, got " + kind_name(v->kind));
    return v->boolean;
}

std::vector<std::string> TomlTable::get_string_array(const std::string& section,
                                                     const std::string& key,
                                                     std::vector<std::string> fallback) const {
    const TomlValue* v = find(section, key);
    if (!v) return fallback;
    if (v->kind != TomlValue::Kind::array)
        throw ConfigError(section + "." + key + " must be an array, got " + kind_name(v->kind));
    std::vector<std::string> out;
    for (const TomlValue& item : v->array) {
        if (item.kind != TomlValue::Kind::string)
            throw ConfigError(section + "." + key + " must contain only strings");
        out.push_back(item.str);
    }
    return out;
}

TomlTable parse_toml(const std::string& text, const std::string& origin) {
    TomlTable table;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno);
        const std::string body = trim(strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') throw FormatError(where + ": unterminated section header");
            section = trim(body.substr(1, body.size() - 2));
            if (section.empty()) throw FormatError(where + ": empty section name");
            continue;
        }
        const size_t eq = body.find('=');
        if (eq == std::string::npos) throw FormatError(where + ": expected key = value");
        const std::string key = trim(body.substr(0, eq));
        if (key.empty()) throw FormatError(where + ": empty key");
        table.set(section, key, parse_value(trim(body.substr(eq + 1)), where));
    }
    return table;
}

TomlTable parse_toml_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config: " + file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str(), file.string());
}

RunConfig run_config_from_table(const TomlTable& t, const fs::path& origin) {
    RunConfig cfg;
    cfg.dataset = t.get_string("run", "dataset", "");
    cfg.subspaces = t.get_string("run", "subspaces", "");
    cfg.output_dir = t.get_string("run", "output_dir", cfg.output_dir.string());
    cfg.approach = t.get_string("run", "approach", cfg.approach);
    cfg.seed = static_cast<uint64_t>(t.get_int("run", "seed", 0));
    cfg.per_category = static_cast<int>(t.get_int("run", "per_category", cfg.per_category));
    cfg.workers = static_cast<int>(t.get_int("run", "workers", cfg.workers));
    cfg.categories = t.get_string_array("run", "categories", {});

    const std::string source = t.get_string("activations", "source", "toy");
    if (source == "toy") {
        cfg.source = ActivationSource::toy;
    } else if (source == "bundle") {
        cfg.source = ActivationSource::bundle;
    } else {
        throw ConfigError("activations.source must be toy or bundle, got '" + source + "'");
    }
    cfg.bundle_dir = t.get_string("activations", "bundle_dir", "");

    cfg.toy.layers = static_cast<int>(t.get_int("toy", "layers", cfg.toy.layers));
    cfg.toy.d_model = static_cast<int>(t.get_int("toy", "d_model", cfg.toy.d_model));
    cfg.toy.d_sae = static_cast<int>(t.get_int("toy", "d_sae", cfg.toy.d_sae));
    cfg.toy.vocab = static_cast<int>(t.get_int("toy", "vocab", cfg.toy.vocab));
    cfg.toy.max_seq = static_cast<int>(t.get_int("toy", "max_seq", cfg.toy.max_seq));
    cfg.toy.seed = static_cast<uint64_t>(t.get_int("toy", "seed", static_cast<int64_t>(cfg.seed)));

    cfg.alignment_layer = static_cast<int>(t.get_int("alignment", "layer", cfg.alignment_layer));
    cfg.normalize_subspaces =
        t.get_bool("alignment", "normalize_subspaces", cfg.normalize_subspaces);

    cfg.n_clusters = static_cast<int>(t.get_int("subgrouping", "n_clusters", cfg.n_clusters));
    cfg.max_size = static_cast<int>(t.get_int("subgrouping", "max_size", cfg.max_size));
    cfg.top_k = static_cast<int>(t.get_int("subgrouping", "top_k", cfg.top_k));
    cfg.anchor_k = static_cast<int>(t.get_int("subgrouping", "anchor_k", cfg.anchor_k));
    try {
        cfg.metric = metric_from_string(t.get_string("subgrouping", "metric", "euclidean"));
        cfg.cluster_criterion =
            criterion_from_string(t.get_string("subgrouping", "cluster_linkage", "ward"));
        cfg.subgroup_criterion =
            criterion_from_string(t.get_string("subgrouping", "subgroup_linkage", "average"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("subgrouping: ") + e.what());
    }
    cfg.active_only = t.get_bool("subgrouping", "active_only", cfg.active_only);

    cfg.alpha = t.get_double("steering", "alpha", cfg.alpha);
    cfg.max_new = static_cast<int>(t.get_int("steering", "max_new", cfg.max_new));

    cfg.judge_kind = t.get_string("judge", "kind", cfg.judge_kind);
    cfg.lexicon = t.get_string("judge", "lexicon", "");
    cfg.remote.url = t.get_string("judge", "url", "");
    cfg.remote.model = t.get_string("judge", "model", "");
    cfg.remote.auth_token = t.get_string("judge", "auth_token", "");
    if (cfg.remote.auth_token.empty())
        if (const char* env = std::getenv("FEATSTEER_JUDGE_TOKEN")) cfg.remote.auth_token = env;
    if (t.has("judge", "temperature"))
        cfg.remote.temperature = t.get_double("judge", "temperature", 0.0);
    cfg.remote.attempts = static_cast<int>(t.get_int("judge", "attempts", cfg.remote.attempts));
    cfg.remote.timeout_seconds =
        static_cast<int>(t.get_int("judge", "timeout_seconds", cfg.remote.timeout_seconds));

    // Relative paths resolve against the config file's directory.
    const fs::path base = origin.parent_path();
    auto resolve = [&](fs::path& p) {
        if (!p.empty() && p.is_relative()) p = base / p;
    };
    resolve(cfg.dataset);
    resolve(cfg.subspaces);
    resolve(cfg.output_dir);
    resolve(cfg.bundle_dir);
    resolve(cfg.lexicon);
    return cfg;
}

RunConfig load_run_config(const fs::path& file) {
    return run_config_from_table(parse_toml_file(file), file);
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw ConfigError("run.dataset is required");
    if (!fs::exists(cfg.dataset))
        throw ConfigError("run.dataset: no such file: " + cfg.dataset.string());
    if (cfg.subspaces.empty()) throw ConfigError("run.subspaces is required");
    if (!fs::exists(cfg.subspaces))
        throw ConfigError("run.subspaces: no such file: " + cfg.subspaces.string());
    if (cfg.approach != "cluster" && cfg.approach != "linkage" && cfg.approach != "single_token" &&
        cfg.approach != "all")
        throw ConfigError("run.approach must be cluster, linkage, single_token, or all");
    if (cfg.per_category < 1) throw ConfigError("run.per_category must be >= 1");
    if (cfg.workers < 1) throw ConfigError("run.workers must be >= 1");

    if (cfg.source == ActivationSource::bundle) {
        if (cfg.bundle_dir.empty())
            throw ConfigError("activations.bundle_dir is required when source = bundle");
        if (!fs::is_directory(cfg.bundle_dir))
            throw ConfigError("activations.bundle_dir: no such directory: " +
                              cfg.bundle_dir.string());
    }

    if (cfg.source == ActivationSource::toy) {
        if (cfg.toy.layers < 1 || cfg.toy.d_model < 1 || cfg.toy.vocab < 1 || cfg.toy.max_seq < 1)
            throw ConfigError("toy: layers, d_model, vocab, max_seq must be positive");
        if (cfg.toy.d_sae < cfg.toy.d_model) throw ConfigError("toy.d_sae must be >= toy.d_model");
        if (cfg.alignment_layer < 0 || cfg.alignment_layer >= cfg.toy.layers)
            throw ConfigError("alignment.layer " + std::to_string(cfg.alignment_layer) +
                              " outside toy model layers 0.." + std::to_string(cfg.toy.layers - 1));
    } else if (cfg.alignment_layer < 0) {
        throw ConfigError("alignment.layer must be >= 0");
    }

    if (cfg.n_clusters < 1) throw ConfigError("subgrouping.n_clusters must be >= 1");
    if (cfg.max_size < 1) throw ConfigError("subgrouping.max_size must be >= 1");
    if (cfg.top_k < 1) throw ConfigError("subgrouping.top_k must be >= 1");
    if (cfg.anchor_k < 1) throw ConfigError("subgrouping.anchor_k must be >= 1");
    if (cfg.max_new < 1) throw ConfigError("steering.max_new must be >= 1");
    if (!std::isfinite(cfg.alpha)) throw ConfigError("steering.alpha must be finite");

    if (cfg.judge_kind == "mock") {
        if (cfg.lexicon.empty()) throw ConfigError("judge.lexicon is required for the mock judge");
        if (!fs::exists(cfg.lexicon))
            throw ConfigError("judge.lexicon: no such file: " + cfg.lexicon.string());
    } else if (cfg.judge_kind == "remote") {
        if (cfg.remote.url.empty()) throw ConfigError("judge.url is required for the remote judge");
        if (cfg.remote.model.empty())
            throw ConfigError("judge.model is required for the remote judge");
    } else {
        throw ConfigError("judge.kind must be mock or remote, got '" + cfg.judge_kind + "'");
    }
}

}  // namespace featsteer
