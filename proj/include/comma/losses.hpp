#pragma once

#include "comma/autodiff.hpp"
#include "comma/masks.hpp"
#include "comma/tensor.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace comma {

/// Everything the losses need from one batch of n clip/narration pairs.
/// Pair (i, j) means clip i run through the model together with narration j.
struct BatchRepresentations {
    std::size_t n = 0;
    std::vector<Tensor> pos_c;                  // ĉ of pair (i, i), D × 1
    std::vector<Tensor> pos_s;                  // ŝ of pair (i, i), D × 1
    std::vector<std::vector<Tensor>> cross_c;   // ĉ of pair (i, j); diagonal unused
    std::vector<std::vector<Tensor>> cross_s;   // ŝ of pair (i, j); diagonal unused
    std::vector<std::vector<Tensor>> word_ctx;  // word outputs of pair (i, j), D × N_L(j)
    std::vector<Tensor> word_val;               // word value vectors of narration i, D × N_L(i)

    void validate() const;
};

struct BatchVars {
    std::size_t n = 0;
    std::vector<Var> pos_c;
    std::vector<Var> pos_s;
    std::vector<std::vector<Var>> cross_c;
    std::vector<std::vector<Var>> cross_s;
    std::vector<std::vector<Var>> word_ctx;
    std::vector<Var> word_val;
};

enum class LossMode { Sentence, Word, Combined };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

inline constexpr double kDefaultSentenceWeight = 0.005;

/// Sentence-level InfoNCE summed over the batch. For sample i the positive
/// logit ĉᵢᵢ·ŝᵢᵢ competes with ĉᵢᵢ·ŝᵢⱼ (other narrations attended with
/// clip i) and ĉⱼᵢ·ŝᵢᵢ (other clips attended with narration i), j ≠ i.
double sentence_loss(const BatchRepresentations& batch);
Var sentence_loss(Tape& tape, const BatchVars& batch);

/// Word-level InfoNCE summed over samples and words. Word j of narration i
/// scores its output from pair (i, i) against its value vector; the
/// negatives are the same word's outputs from pairs (k, i), k ≠ i.
double word_loss(const BatchRepresentations& batch, std::span<const ModalityLayout> layouts);
Var word_loss(Tape& tape, const BatchVars& batch);

/// word_loss + lambda · sentence_loss.
double combined_loss(const BatchRepresentations& batch, std::span<const ModalityLayout> layouts,
                     double lambda = kDefaultSentenceWeight);
Var combined_loss(Tape& tape, const BatchVars& batch, double lambda);

/// Loss for a given mode; lambda only matters for Combined.
Var batch_loss(Tape& tape, const BatchVars& batch, LossMode mode, double lambda);

/// Places every tensor of `batch` on `tape` as an input.
BatchVars bind_batch(Tape& tape, const BatchRepresentations& batch);

}  // namespace comma
