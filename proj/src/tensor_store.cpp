#include "featsteer/tensor_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace featsteer {

namespace {

// Payloads are f32 little-endian on disk. All supported targets are
// little-endian; refuse to build elsewhere rather than silently swap.
static_assert(std::endian::native == std::endian::little, "bundle payloads assume a little-endian host");

void write_f32_payload(const fs::path& file, const MatrixF& m) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!out) throw IoError("short write: " + file.string());
}

MatrixF read_f32_payload(const fs::path& file, int rows, int cols) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("missing payload file: " + file.string());
    const auto bytes = static_cast<uint64_t>(in.tellg());
    const uint64_t expected = static_cast<uint64_t>(rows) * cols * sizeof(float);
    if (bytes != expected) {
        std::ostringstream msg;
        msg << "payload size mismatch in " << file.string() << ": expected " << expected
            << " bytes (" << rows << "x" << cols << " f32), found " << bytes;
        throw FormatError(msg.str());
    }
    MatrixF m(rows, cols);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(expected));
    if (!in) throw FormatError("short read: " + file.string());
    for (float v : m.data) {
        if (!std::isfinite(v)) throw FormatError("non-finite value in " + file.string());
    }
    return m;
}

json load_json_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("missing file: " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("bad JSON in " + file.string() + ": " + e.what());
    }
    return j;
}

}  // namespace

ActivationBundle read_activation_bundle(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    const json j = load_json_file(manifest_path);

    BundleMeta meta;
    try {
        meta.version = j.at("version").get<int>();
        meta.layers = j.at("L").get<int>();
        meta.sl = j.at("sl").get<int>();
        meta.d_model = j.at("d_model").get<int>();
        meta.d_sae = j.at("d_sae").get<int>();
        meta.num = j.at("num").get<int>();
        meta.pos_token_ids = j.at("pos_token_ids").get<std::vector<int>>();
        meta.tokens = j.at("tokens").get<std::vector<std::string>>();
        meta.prompt_id = j.at("prompt_id").get<std::string>();
        meta.dtype = j.at("dtype").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError("bad manifest " + manifest_path.string() + ": " + e.what());
    }

    if (meta.version != 1) throw FormatError("unsupported bundle version in " + manifest_path.string());
    if (meta.dtype != "f32le") throw FormatError("unsupported dtype '" + meta.dtype + "' in " + manifest_path.string());
    if (meta.layers < 1 || meta.sl < 0 || meta.d_model < 1 || meta.d_sae < 1 || meta.num < 0)
        throw FormatError("non-positive shape in " + manifest_path.string());
    if (static_cast<int>(meta.pos_token_ids.size()) != meta.num)
        throw FormatError("num does not match pos_token_ids length in " + manifest_path.string());
    if (static_cast<int>(meta.tokens.size()) != meta.sl)
        throw FormatError("tokens length does not match sl in " + manifest_path.string());
    for (int t : meta.pos_token_ids) {
        if (t < 0 || t >= meta.sl)
            throw FormatError("pos token id out of range in " + manifest_path.string());
    }

    ActivationBundle bundle;
    bundle.meta = meta;
    bundle.resid.reserve(meta.layers);
    bundle.sae.reserve(meta.layers);
    for (int k = 0; k < meta.layers; ++k) {
        ResidualStream rs;
        rs.layer = k;
        rs.m = read_f32_payload(dir / ("resid_" + std::to_string(k) + ".bin"), meta.sl, meta.d_model);
        bundle.resid.push_back(std::move(rs));

        LayerActivations la;
        la.layer = k;
        la.token_ids = meta.pos_token_ids;
        la.m = read_f32_payload(dir / ("sae_" + std::to_string(k) + ".bin"), meta.num, meta.d_sae);
        bundle.sae.push_back(std::move(la));
    }
    return bundle;
}

void write_activation_bundle(const ActivationBundle& bundle, const fs::path& dir) {
    const BundleMeta& meta = bundle.meta;
    if (static_cast<int>(bundle.resid.size()) != meta.layers ||
        static_cast<int>(bundle.sae.size()) != meta.layers)
        throw FormatError("bundle layer count does not match manifest L");
    if (static_cast<int>(meta.pos_token_ids.size()) != meta.num)
        throw FormatError("num does not match pos_token_ids length");
    if (static_cast<int>(meta.tokens.size()) != meta.sl)
        throw FormatError("tokens length does not match sl");
    for (int k = 0; k < meta.layers; ++k) {
        if (bundle.resid[k].m.rows != meta.sl || bundle.resid[k].m.cols != meta.d_model)
            throw FormatError("resid layer " + std::to_string(k) + " has wrong shape");
        if (bundle.sae[k].m.rows != meta.num || bundle.sae[k].m.cols != meta.d_sae)
            throw FormatError("sae layer " + std::to_string(k) + " has wrong shape");
    }

    fs::create_directories(dir);
    json j;
    j["version"] = meta.version;
    j["L"] = meta.layers;
    j["sl"] = meta.sl;
    j["d_model"] = meta.d_model;
    j["d_sae"] = meta.d_sae;
    j["num"] = meta.num;
    j["pos_token_ids"] = meta.pos_token_ids;
    j["tokens"] = meta.tokens;
    j["prompt_id"] = meta.prompt_id;
    j["dtype"] = meta.dtype;

    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + (dir / "manifest.json").string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + (dir / "manifest.json").string());

    for (int k = 0; k < meta.layers; ++k) {
        write_f32_payload(dir / ("resid_" + std::to_string(k) + ".bin"), bundle.resid[k].m);
        write_f32_payload(dir / ("sae_" + std::to_string(k) + ".bin"), bundle.sae[k].m);
    }
}

SubspaceSet read_subspaces(const fs::path& file, bool normalize) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open subspace file: " + file.string());

    SubspaceSet set;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        SubspaceConcept c;
        try {
            c.description = j.at("description").get<std::string>();
            c.vector = j.at("vector").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!set.concepts.empty() && c.vector.size() != set.concepts[0].vector.size())
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": subspace dimension mismatch");

        double norm_sq = 0.0;
        for (double v : c.vector) {
            if (!std::isfinite(v))
                throw FormatError(file.string() + ":" + std::to_string(lineno) + ": non-finite subspace entry");
            norm_sq += v * v;
        }
        if (norm_sq == 0.0)
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": zero subspace vector");
        if (normalize) {
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (double& v : c.vector) v *= inv;
        }
        set.concepts.push_back(std::move(c));
    }
    return set;
}

void write_subspaces(const SubspaceSet& set, const fs::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    for (const SubspaceConcept& c : set.concepts) {
        json j;
        j["description"] = c.description;
        j["vector"] = c.vector;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + file.string());
}

TransposedActivations transpose_layer(const LayerActivations& a) {
    TransposedActivations t;
    t.layer = a.layer;
    t.m = MatrixF(a.m.cols, a.m.rows);
    for (int r = 0; r < a.m.rows; ++r)
        for (int c = 0; c < a.m.cols; ++c)
            t.m.at(c, r) = a.m.at(r, c);
    return t;
}

MeanActivationVector mean_over_tokens(const TransposedActivations& a) {
    if (a.m.cols == 0) throw std::invalid_argument("empty pos set");
    MeanActivationVector mean;
    mean.layer = a.layer;
    mean.values.resize(a.m.rows);
    for (int f = 0; f < a.m.rows; ++f) {
        double sum = 0.0;
        for (int t = 0; t < a.m.cols; ++t) sum += a.m.at(f, t);
        mean.values[f] = sum / a.m.cols;
    }
    return mean;
}

}  // namespace featsteer
