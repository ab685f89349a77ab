#include "comma/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace comma {

AttentionLayerParams AttentionLayerParams::cross(std::size_t d) {
    return {AttentionKind::CrossAttention, Tensor::identity(d), Tensor::identity(d), Tensor::identity(d)};
}

AttentionLayerParams AttentionLayerParams::self(Tensor w_k, Tensor w_q, Tensor w_v) {
    AttentionLayerParams p{AttentionKind::SelfAttention, std::move(w_k), std::move(w_q), std::move(w_v)};
    p.validate();
    return p;
}

void AttentionLayerParams::validate() const {
    const std::size_t d = w_k.rank() == 2 ? w_k.rows() : 0;
    for (const Tensor* w : {&w_k, &w_q, &w_v}) {
        if (w->rank() != 2 || w->rows() != d || w->cols() != d) {
            throw std::invalid_argument("attention projections must be square and of equal dimension");
        }
    }
    if (kind == AttentionKind::CrossAttention) {
        const Tensor eye = Tensor::identity(d);
        if (w_k != eye || w_q != eye || w_v != eye) {
            throw std::invalid_argument("cross-attention projections must be the identity");
        }
    }
}

AttentionOutput attention(const Tensor& keys, const Tensor& queries, const Tensor& values,
                          const AttentionMask& mask) {
    Tape tape;
    const auto out = attention(tape, tape.input(keys), tape.input(queries), tape.input(values), mask);
    return {tape.value(out.context), tape.value(out.weights)};
}

AttentionOutput attend(const Tensor& y, const AttentionLayerParams& params, const AttentionMask& mask) {
    params.validate();
    if (y.rank() != 2 || y.rows() != params.dim()) {
        throw std::invalid_argument("attend: feature dimension does not match projections");
    }
    Tape tape;
    const Var yv = tape.input(y);
    std::optional<ProjectionVars> proj;
    if (params.kind == AttentionKind::SelfAttention) {
        proj = ProjectionVars{tape.input(params.w_k), tape.input(params.w_q), tape.input(params.w_v)};
    }
    const auto out = attend(tape, yv, proj, mask);
    return {tape.value(out.context), tape.value(out.weights)};
}

AttentionOutput cross_attention_layer(const Tensor& y, const ModalityLayout& layout) {
    if (y.rank() != 2 || y.cols() != layout.total()) {
        throw std::invalid_argument("cross_attention_layer: token count does not match layout");
    }
    return attend(y, AttentionLayerParams::cross(y.rows()), cross_modal_mask(layout));
}

AttentionOutput self_attention_layer(const Tensor& y, const ModalityLayout& layout,
                                     const AttentionLayerParams& params, SelfAttentionVariant variant) {
    if (y.rank() != 2 || y.cols() != layout.total()) {
        throw std::invalid_argument("self_attention_layer: token count does not match layout");
    }
    if (params.kind != AttentionKind::SelfAttention) {
        throw std::invalid_argument("self_attention_layer: expected self-attention parameters");
    }
    return attend(y, params, self_attention_mask(layout, variant));
}

AttentionVars attention(Tape& tape, Var keys, Var queries, Var values, const AttentionMask& mask) {
    const Tensor& k = tape.value(keys);
    const Tensor& q = tape.value(queries);
    const Tensor& v = tape.value(values);
    if (k.rank() != 2 || q.shape() != k.shape() || v.shape() != k.shape()) {
        throw std::invalid_argument("attention: keys, queries and values must share a D×N shape");
    }
    if (mask.size() != k.cols()) {
        throw std::invalid_argument("attention: mask size does not match token count");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(k.rows()));
    const Var logits = tape.scale(tape.matmul(tape.transpose(queries), keys), inv_sqrt_d);
    const Var weights = tape.masked_softmax(logits, mask);
    const Var context = tape.matmul(values, tape.transpose(weights));
    return {context, weights};
}

AttentionVars attend(Tape& tape, Var y, const std::optional<ProjectionVars>& projections,
                     const AttentionMask& mask) {
    if (!projections) {
        return attention(tape, y, y, y, mask);
    }
    const Var k = tape.matmul(projections->w_k, y);
    const Var q = tape.matmul(projections->w_q, y);
    const Var v = tape.matmul(projections->w_v, y);
    return attention(tape, k, q, v, mask);
}

}  // namespace comma
