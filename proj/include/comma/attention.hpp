#pragma once

#include "comma/autodiff.hpp"
#include "comma/masks.hpp"
#include "comma/tensor.hpp"

#include <optional>

namespace comma {

enum class AttentionKind { CrossAttention, SelfAttention };

/// Key/query/value projections of one attention layer. Cross-attention
/// layers use fixed identity projections that are never trained.
struct AttentionLayerParams {
    AttentionKind kind = AttentionKind::CrossAttention;
    Tensor w_k;
    Tensor w_q;
    Tensor w_v;

    static AttentionLayerParams cross(std::size_t d);
    static AttentionLayerParams self(Tensor w_k, Tensor w_q, Tensor w_v);

    std::size_t dim() const { return w_k.rows(); }
    void validate() const;
};

struct AttentionOutput {
    Tensor context;  // D × total, column j is the output for token j
    Tensor weights;  // total × total, row j holds token j's weights over keys
};

/// Masked key/query/value attention on already projected matrices
/// (each D × total):
///   weights = masked_softmax(Qᵀ K / √D, mask)
///   context[:, j] = Σ_k weights[j, k] · V[:, k]
AttentionOutput attention(const Tensor& keys, const Tensor& queries, const Tensor& values,
                          const AttentionMask& mask);

/// Projects `y` (D × total) with the layer's W_K, W_Q, W_V and attends.
AttentionOutput attend(const Tensor& y, const AttentionLayerParams& params, const AttentionMask& mask);

AttentionOutput cross_attention_layer(const Tensor& y, const ModalityLayout& layout);
AttentionOutput self_attention_layer(const Tensor& y, const ModalityLayout& layout,
                                     const AttentionLayerParams& params, SelfAttentionVariant variant);

// Taped counterparts used for training.

struct AttentionVars {
    Var context;
    Var weights;
};

struct ProjectionVars {
    Var w_k;
    Var w_q;
    Var w_v;
};

AttentionVars attention(Tape& tape, Var keys, Var queries, Var values, const AttentionMask& mask);

/// Without projections the layer uses identity W_K, W_Q, W_V.
AttentionVars attend(Tape& tape, Var y, const std::optional<ProjectionVars>& projections,
                     const AttentionMask& mask);

}  // namespace comma
