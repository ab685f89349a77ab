#pragma once

#include "comma/attention.hpp"
#include "comma/autodiff.hpp"
#include "comma/masks.hpp"
#include "comma/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace comma {

struct CommaConfig {
    std::size_t d_video_in = 16;
    std::size_t d_word_in = 16;
    /// Joint embedding dimension D. 512 in the full-scale setup; 32 is the
    /// desk-scale default.
    std::size_t d_model = 32;
    SelfAttentionVariant sa_variant = SelfAttentionVariant::Spatiotemporal;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LinearParams {
    Tensor weight;  // out × in
    Tensor bias;    // out × 1

    friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

struct Mlp2Params {
    LinearParams fc1;
    LinearParams fc2;

    friend bool operator==(const Mlp2Params&, const Mlp2Params&) = default;
};

/// Every trainable tensor of the model. The cross-attention projections are
/// fixed identities and therefore not stored.
struct CommaParams {
    LinearParams video_proj;
    Mlp2Params word_proj;
    Tensor sa_w_k;
    Tensor sa_w_q;
    Tensor sa_w_v;
    Mlp2Params word_value;

    /// (name, tensor) pairs in a fixed canonical order.
    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;

    AttentionLayerParams self_attention() const;

    friend bool operator==(const CommaParams&, const CommaParams&) = default;
};

/// Xavier-uniform weights drawn from a generator seeded with cfg.seed;
/// biases start at zero.
CommaParams init_params(const CommaConfig& cfg);

struct Embedded {
    Tensor clip;   // D × (T·H·W)
    Tensor words;  // D × N_L
};

/// Flattens a d × T × H × W grid into d × (T·H·W) region columns.
Tensor flatten_clip(const Tensor& clip_features);
/// Layout implied by a feature grid and a word matrix.
ModalityLayout layout_for(const Tensor& clip_features, const Tensor& word_features);

Embedded embed(const Tensor& clip_features, const Tensor& word_features, const CommaParams& params);

struct CommaOutput {
    Tensor c_ca2;  // D × (T·H·W)
    Tensor s_ca2;  // D × N_L
    std::array<Tensor, 3> layer_weights;  // CA1, SA, CA2
};

CommaOutput forward(const Tensor& clip_embedded, const Tensor& words_embedded, const ModalityLayout& layout,
                    const CommaParams& params, SelfAttentionVariant variant);

struct Pooled {
    Tensor c_hat;  // D × 1
    Tensor s_hat;  // D × 1
};

Pooled pool(const CommaOutput& output, const ModalityLayout& layout);

// Taped model pieces.

struct ParamVars {
    Var video_w, video_b;
    Var word_w1, word_b1, word_w2, word_b2;
    Var sa_w_k, sa_w_q, sa_w_v;
    Var value_w1, value_b1, value_w2, value_b2;
};

/// Registers every parameter on `tape` under its canonical name.
ParamVars bind_params(Tape& tape, const CommaParams& params);

struct EmbeddedVars {
    Var clip;
    Var words;
};

EmbeddedVars embed(Tape& tape, const ParamVars& p, Var clip_flat, Var word_features);
/// Value representation of each embedded word: word_value MLP applied to S₀.
Var word_values(Tape& tape, const ParamVars& p, Var words_embedded);

struct CommaVars {
    Var c_ca2;
    Var s_ca2;
    std::array<Var, 3> layer_weights;
};

/// CA1 -> SA -> CA2 over the word-first token sequence.
CommaVars forward(Tape& tape, const ParamVars& p, Var clip_embedded, Var words_embedded,
                  const ModalityLayout& layout, SelfAttentionVariant variant);

struct PooledVars {
    Var c_hat;
    Var s_hat;
};

PooledVars pool(Tape& tape, const CommaVars& output);

// Checkpoints: a JSON manifest plus one CMMA1 file per parameter.

void save_checkpoint(const std::filesystem::path& dir, const CommaConfig& cfg, const CommaParams& params);

struct Checkpoint {
    CommaConfig config;
    CommaParams params;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace comma
