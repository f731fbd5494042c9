#pragma once

// On-disk activation bundles and the in-memory tensors the pipeline works on.
//
// Bundle directory layout:
//   manifest.json              shapes, pos token ids, token strings, prompt id
//   resid_<layer>.bin          sl * d_model f32 little-endian, token-major
//   sae_<layer>.bin            num * d_sae f32 little-endian, token-major
//
// Subspace file: JSONL, one {"description": ..., "vector": [...]} per line.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featsteer/common.hpp"

namespace featsteer {

// Row-major float matrix. Activations live in f32 so bundle round-trips
// are bit exact; analysis math promotes to double at the call sites.
struct MatrixF {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    MatrixF() = default;
    MatrixF(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {}

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// One layer's residual stream for every prompt token (sl x d_model).
struct ResidualStream {
    int layer = 0;
    MatrixF m;
};

// One layer's SAE activations restricted to the pos tokens (num x d_sae).
// token_ids[r] is the prompt position of row r.
struct LayerActivations {
    int layer = 0;
    std::vector<int> token_ids;
    MatrixF m;
};

// d_sae x num view used by the clustering stages.
struct TransposedActivations {
    int layer = 0;
    MatrixF m;
};

// Per-feature mean activation across the pos tokens.
struct MeanActivationVector {
    int layer = 0;
    std::vector<double> values;
};

struct SubspaceConcept {
    std::string description;
    std::vector<double> vector;
};

struct SubspaceSet {
    std::vector<SubspaceConcept> concepts;

    int dim() const { return concepts.empty() ? 0 : static_cast<int>(concepts[0].vector.size()); }
    int size() const { return static_cast<int>(concepts.size()); }
};

struct BundleMeta {
    int version = 1;
    int layers = 0;   // L
    int sl = 0;       // prompt length in tokens
    int d_model = 0;
    int d_sae = 0;
    int num = 0;      // |pos|
    std::vector<int> pos_token_ids;
    std::vector<std::string> tokens;  // one string per prompt position
    std::string prompt_id;
    std::string dtype = "f32le";
};

struct ActivationBundle {
    BundleMeta meta;
    std::vector<ResidualStream> resid;    // one per layer
    std::vector<LayerActivations> sae;    // one per layer
};

ActivationBundle read_activation_bundle(const std::filesystem::path& dir);
void write_activation_bundle(const ActivationBundle& bundle, const std::filesystem::path& dir);

SubspaceSet read_subspaces(const std::filesystem::path& file, bool normalize = false);
void write_subspaces(const SubspaceSet& set, const std::filesystem::path& file);

// Where concept subspaces come from. The only implementation reads them from
// disk; a concept-extraction service would slot in behind the same interface.
struct ConceptSource {
    virtual ~ConceptSource() = default;
    virtual SubspaceSet load() = 0;
};

class FileConceptSource : public ConceptSource {
  public:
    explicit FileConceptSource(std::filesystem::path file, bool normalize = false)
        : file_(std::move(file)), normalize_(normalize) {}
    SubspaceSet load() override { return read_subspaces(file_, normalize_); }

  private:
    std::filesystem::path file_;
    bool normalize_;
};

TransposedActivations transpose_layer(const LayerActivations& a);

// Arithmetic mean of each feature row; throws on an empty pos set.
MeanActivationVector mean_over_tokens(const TransposedActivations& a);

}  // namespace featsteer
