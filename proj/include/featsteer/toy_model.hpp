#pragma once

// Desk-scale stand-in for the capture target: a deterministic residual
// network (per-layer square mixing map + tanh feeding an additive residual
// update, no attention) with a randomly initialized per-layer SAE. Every
// parameter is a pure function of the seed, every forward pass a pure
// function of (parameters, tokens, plan), so captures and generations are
// bit-reproducible across runs.

#include <cstdint>
#include <string>
#include <vector>

#include "featsteer/plan.hpp"
#include "featsteer/tensor_store.hpp"

namespace featsteer {

struct ToyModelConfig {
    int layers = 4;    // L
    int d_model = 32;
    int d_sae = 128;
    int vocab = 64;
    int max_seq = 32;
    uint64_t seed = 0;
};

struct ToyModel {
    ToyModelConfig cfg;
    MatrixF embed;                         // vocab x d_model
    std::vector<MatrixF> mix;              // per layer, d_model x d_model
    std::vector<std::vector<float>> bias;  // per layer, d_model
    MatrixF unembed;                       // vocab x d_model
};

struct ToySae {
    int d_model = 0;
    int d_sae = 0;
    std::vector<MatrixF> enc;                  // per layer, d_sae x d_model
    std::vector<std::vector<float>> enc_bias;  // per layer, d_sae
    std::vector<MatrixF> dec;                  // per layer, d_sae x d_model, unit-norm rows
};

struct ToyLab {
    ToyModel model;
    ToySae sae;
};

ToyLab build_toy_model(const ToyModelConfig& cfg);

struct ForwardResult {
    std::vector<ResidualStream> resid;  // one per layer, post-block (post-injection)
    MatrixF logits;                     // sl x vocab
};

// Forward pass with optional steering. At each planned layer, after the
// block's residual update, every position receives + alpha*scale*dec_row.
// Plan entries are validated against model dims before any compute.
ForwardResult apply_steering_forward(const ToyModel& model, const ToySae& sae,
                                     const std::vector<int>& tokens, const SteeringPlan& plan);

// Unsteered forward + per-layer SAE encodings restricted to the pos
// positions; the result round-trips through the tensor-store format.
ActivationBundle capture_activations(const ToyModel& model, const ToySae& sae,
                                     const std::vector<int>& tokens, const std::vector<int>& pos,
                                     const std::string& prompt_id = "");

// Greedy decoding (ties -> lowest token id). Returns the prompt followed by
// up to max_new generated tokens; generation stops early only at max_seq.
std::vector<int> generate(const ToyModel& model, const ToySae& sae, const std::vector<int>& prompt,
                          const SteeringPlan& plan, int max_new);

// Whitespace words hashed into the vocab (FNV-1a, modulo), so any prompt
// text maps to a stable token sequence.
std::vector<int> toy_tokenize(const std::string& text, int vocab);
std::string toy_token_string(int token);                       // "t<id>"
std::string toy_detokenize(const std::vector<int>& tokens);    // token strings joined by spaces

}  // namespace featsteer
