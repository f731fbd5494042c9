#include "featsteer/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace featsteer {

namespace {

// Raw engine draws mapped explicitly; std::uniform_real_distribution is
// implementation-defined and would break cross-toolchain reproducibility.
double u01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

float uniform(std::mt19937_64& g, double lo, double hi) {
    return static_cast<float>(lo + (hi - lo) * u01(g));
}

MatrixF random_matrix(std::mt19937_64& g, int rows, int cols, double lo, double hi) {
    MatrixF m(rows, cols);
    for (float& v : m.data) v = uniform(g, lo, hi);
    return m;
}

void validate_tokens(const ToyModelConfig& cfg, const std::vector<int>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("empty prompt");
    if (static_cast<int>(tokens.size()) > cfg.max_seq)
        throw std::invalid_argument("prompt length " + std::to_string(tokens.size()) +
                                    " exceeds max_seq " + std::to_string(cfg.max_seq));
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab)
            throw std::invalid_argument("token id " + std::to_string(t) + " outside vocab");
}

void validate_plan(const ToyModelConfig& cfg, const SteeringPlan& plan) {
    for (const PlanEntry& e : plan.entries) {
        if (e.layer < 0 || e.layer >= cfg.layers)
            throw std::invalid_argument("plan layer " + std::to_string(e.layer) + " outside 0.." +
                                        std::to_string(cfg.layers - 1));
        if (e.feature < 0 || e.feature >= cfg.d_sae)
            throw std::invalid_argument("plan feature " + std::to_string(e.feature) +
                                        " outside 0.." + std::to_string(cfg.d_sae - 1));
        if (!std::isfinite(e.alpha) || !std::isfinite(e.scale))
            throw std::invalid_argument("plan entry for feature " + std::to_string(e.feature) +
                                        " has non-finite alpha/scale");
    }
}

}  // namespace

ToyLab build_toy_model(const ToyModelConfig& cfg) {
    if (cfg.layers < 1 || cfg.d_model < 1 || cfg.d_sae < cfg.d_model || cfg.vocab < 1 ||
        cfg.max_seq < 1)
        throw std::invalid_argument("invalid toy model config");

    std::mt19937_64 g(cfg.seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

    ToyLab lab;
    lab.model.cfg = cfg;
    lab.model.embed = random_matrix(g, cfg.vocab, cfg.d_model, -1.0, 1.0);
    for (int k = 0; k < cfg.layers; ++k) {
        lab.model.mix.push_back(random_matrix(g, cfg.d_model, cfg.d_model, -s, s));
        std::vector<float> b(cfg.d_model);
        for (float& v : b) v = uniform(g, -0.1, 0.1);
        lab.model.bias.push_back(std::move(b));
    }
    lab.model.unembed = random_matrix(g, cfg.vocab, cfg.d_model, -1.0, 1.0);

    lab.sae.d_model = cfg.d_model;
    lab.sae.d_sae = cfg.d_sae;
    for (int k = 0; k < cfg.layers; ++k) {
        lab.sae.enc.push_back(random_matrix(g, cfg.d_sae, cfg.d_model, -s, s));
        // Negative-leaning bias so a realistic share of features stays silent
        // on any one prompt.
        std::vector<float> b(cfg.d_sae);
        for (float& v : b) v = uniform(g, -0.6, 0.1);
        lab.sae.enc_bias.push_back(std::move(b));

        MatrixF dec(cfg.d_sae, cfg.d_model);
        for (int f = 0; f < cfg.d_sae; ++f) {
            double norm2 = 0.0;
            do {
                norm2 = 0.0;
                for (int j = 0; j < cfg.d_model; ++j) {
                    const double v = -1.0 + 2.0 * u01(g);
                    dec.at(f, j) = static_cast<float>(v);
                    norm2 += v * v;
                }
            } while (norm2 < 1e-12);
            const double inv = 1.0 / std::sqrt(norm2);
            for (int j = 0; j < cfg.d_model; ++j)
                dec.at(f, j) = static_cast<float>(dec.at(f, j) * inv);
        }
        lab.sae.dec.push_back(std::move(dec));
    }
    return lab;
}

ForwardResult apply_steering_forward(const ToyModel& model, const ToySae& sae,
                                     const std::vector<int>& tokens, const SteeringPlan& plan) {
    const ToyModelConfig& cfg = model.cfg;
    validate_tokens(cfg, tokens);
    validate_plan(cfg, plan);

    const int sl = static_cast<int>(tokens.size());
    MatrixF h(sl, cfg.d_model);
    for (int t = 0; t < sl; ++t)
        for (int j = 0; j < cfg.d_model; ++j) h.at(t, j) = model.embed.at(tokens[t], j);

    ForwardResult out;
    for (int k = 0; k < cfg.layers; ++k) {
        for (int t = 0; t < sl; ++t) {
            std::vector<float> u(cfg.d_model);
            for (int j = 0; j < cfg.d_model; ++j) {
                float acc = model.bias[k][j];
                for (int i = 0; i < cfg.d_model; ++i) acc += model.mix[k].at(j, i) * h.at(t, i);
                u[j] = acc;
            }
            for (int j = 0; j < cfg.d_model; ++j) h.at(t, j) += std::tanh(u[j]);
        }

        // Injection sums in double and rounds once so the steered-minus-base
        // delta stays within float half-ulp of the ideal sum.
        std::vector<double> delta(cfg.d_model, 0.0);
        bool planned = false;
        for (const PlanEntry& e : plan.entries) {
            if (e.layer != k) continue;
            planned = true;
            for (int j = 0; j < cfg.d_model; ++j)
                delta[j] += e.alpha * e.scale * static_cast<double>(sae.dec[k].at(e.feature, j));
        }
        if (planned) {
            for (int t = 0; t < sl; ++t)
                for (int j = 0; j < cfg.d_model; ++j)
                    h.at(t, j) = static_cast<float>(static_cast<double>(h.at(t, j)) + delta[j]);
        }

        ResidualStream snap;
        snap.layer = k;
        snap.m = h;
        out.resid.push_back(std::move(snap));
    }

    out.logits = MatrixF(sl, cfg.vocab);
    for (int t = 0; t < sl; ++t) {
        for (int v = 0; v < cfg.vocab; ++v) {
            float acc = 0.0f;
            for (int j = 0; j < cfg.d_model; ++j) acc += model.unembed.at(v, j) * h.at(t, j);
            out.logits.at(t, v) = acc;
        }
    }
    return out;
}

ActivationBundle capture_activations(const ToyModel& model, const ToySae& sae,
                                     const std::vector<int>& tokens, const std::vector<int>& pos,
                                     const std::string& prompt_id) {
    const ToyModelConfig& cfg = model.cfg;
    const int sl = static_cast<int>(tokens.size());
    for (int p : pos)
        if (p < 0 || p >= sl)
            throw std::invalid_argument("pos position " + std::to_string(p) +
                                        " outside prompt of length " + std::to_string(sl));

    ForwardResult fwd = apply_steering_forward(model, sae, tokens, SteeringPlan{});

    ActivationBundle bundle;
    bundle.meta.version = 1;
    bundle.meta.layers = cfg.layers;
    bundle.meta.sl = sl;
    bundle.meta.d_model = cfg.d_model;
    bundle.meta.d_sae = cfg.d_sae;
    bundle.meta.num = static_cast<int>(pos.size());
    bundle.meta.pos_token_ids = pos;
    for (int t : tokens) bundle.meta.tokens.push_back(toy_token_string(t));
    bundle.meta.prompt_id = prompt_id;

    bundle.resid = std::move(fwd.resid);
    for (int k = 0; k < cfg.layers; ++k) {
        LayerActivations acts;
        acts.layer = k;
        acts.token_ids = pos;
        acts.m = MatrixF(static_cast<int>(pos.size()), cfg.d_sae);
        for (size_t r = 0; r < pos.size(); ++r) {
            for (int f = 0; f < cfg.d_sae; ++f) {
                float acc = sae.enc_bias[k][f];
                for (int j = 0; j < cfg.d_model; ++j)
                    acc += sae.enc[k].at(f, j) * bundle.resid[k].m.at(pos[r], j);
                acts.m.at(static_cast<int>(r), f) = acc > 0.0f ? acc : 0.0f;
            }
        }
        bundle.sae.push_back(std::move(acts));
    }
    return bundle;
}

std::vector<int> generate(const ToyModel& model, const ToySae& sae, const std::vector<int>& prompt,
                          const SteeringPlan& plan, int max_new) {
    if (max_new < 1) throw std::invalid_argument("max_new must be >= 1");
    std::vector<int> seq = prompt;
    while (static_cast<int>(seq.size()) < model.cfg.max_seq &&
           static_cast<int>(seq.size()) - static_cast<int>(prompt.size()) < max_new) {
        ForwardResult fwd = apply_steering_forward(model, sae, seq, plan);
        const int last = static_cast<int>(seq.size()) - 1;
        int best = 0;
        for (int v = 1; v < model.cfg.vocab; ++v)
            if (fwd.logits.at(last, v) > fwd.logits.at(last, best)) best = v;
        seq.push_back(best);
    }
    return seq;
}

std::vector<int> toy_tokenize(const std::string& text, int vocab) {
    if (vocab < 1) throw std::invalid_argument("vocab must be >= 1");
    std::vector<int> tokens;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        uint64_t h = 14695981039346656037ull;
        for (unsigned char c : word) {
            h ^= c;
            h *= 1099511628211ull;
        }
        tokens.push_back(static_cast<int>(h % static_cast<uint64_t>(vocab)));
    }
    return tokens;
}

std::string toy_token_string(int token) { return "t" + std::to_string(token); }

std::string toy_detokenize(const std::vector<int>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += toy_token_string(tokens[i]);
    }
    return out;
}

}  // namespace featsteer
