#pragma once

#include "comma/losses.hpp"
#include "comma/model.hpp"
#include "comma/synth.hpp"
#include "comma/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace comma {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 1;
    std::size_t warmup_epochs = 1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossMode loss_mode = LossMode::Sentence;
    double lambda = kDefaultSentenceWeight;
    std::uint64_t seed = 0;
    /// Global gradient-norm clip; 0 disables clipping.
    double grad_clip = 0.0;
    unsigned threads = 1;

    void validate() const;
};

struct OptimizerState {
    Gradients first_moment;
    Gradients second_moment;
    std::size_t step = 0;
};

using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

/// Linear warmup: lr · min(1, (step + 1) / (warmup_epochs · steps_per_epoch)).
double warmup_lr(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

/// AdamW with bias correction and decoupled weight decay:
///   θ ← θ − rate·wd·θ,  θ ← θ − rate·m̂ / (√v̂ + ε).
void adamw_step(const ParamRefs& params, const Gradients& grads, OptimizerState& state, double rate,
                const TrainConfig& cfg);

/// Borrowed clip/word feature pair.
struct SampleRef {
    const Tensor* clip_features;  // d × T × H × W
    const Tensor* word_features;  // d × N_L
};

std::vector<SampleRef> refs_of(std::span<const GroundingSample> samples);

struct BatchGradients {
    double loss = 0.0;
    Gradients grads;
};

/// Loss and parameter gradients for one batch. Every (clip i, narration j)
/// pair runs through the model, so a batch costs n² forwards.
BatchGradients batch_gradients(const CommaParams& params, std::span<const SampleRef> batch,
                               SelfAttentionVariant variant, LossMode mode, double lambda, unsigned threads = 1);

/// Forward-only loss of the same computation.
double batch_loss_value(const CommaParams& params, std::span<const SampleRef> batch, SelfAttentionVariant variant,
                        LossMode mode, double lambda);

struct LossLogRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    CommaParams params;
    std::vector<LossLogRow> log;
    std::vector<double> epoch_loss;  // mean step loss per epoch
    std::size_t steps_per_epoch = 0;
};

using ProgressFn = std::function<void(const LossLogRow&)>;

/// Seeded per-epoch shuffle, last partial batch dropped. Throws
/// std::runtime_error on a non-finite loss.
TrainResult train(std::span<const GroundingSample> dataset, const CommaConfig& model_cfg,
                  const TrainConfig& train_cfg, const ProgressFn& progress = {});

/// Continues from given parameters instead of a fresh initialization.
TrainResult train_from(CommaParams params, std::span<const GroundingSample> dataset, const CommaConfig& model_cfg,
                       const TrainConfig& train_cfg, const ProgressFn& progress = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossLogRow>& log);

struct GradCheckEntry {
    std::string name;
    std::size_t count = 0;
    /// max|analytic − numeric| / max(max|analytic|, max|numeric|) over the tensor.
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double max_error() const;
    bool passed(double tolerance) const { return max_error() <= tolerance; }
};

/// Compares `analytic` against central differences of `loss` around the
/// current parameter values. Parameters are restored afterwards.
GradCheckReport finite_difference_check(const ParamRefs& params, const std::function<double()>& loss,
                                        const Gradients& analytic, double step = 1e-5);

struct GradCheckSetup {
    std::size_t batch_size = 2;
    std::size_t n_words = 3;
    std::size_t grid_t = 2;
    std::size_t grid_h = 2;
    std::size_t grid_w = 2;
    LossMode loss_mode = LossMode::Sentence;
    double lambda = kDefaultSentenceWeight;
    double step = 1e-5;
};

/// Replaces the analytic gradient computation; used to inject faulty
/// backward passes in tests.
using GradientFn = std::function<Gradients(const CommaParams&, std::span<const SampleRef>)>;

/// Gradient check of the full model and loss on a small random batch.
GradCheckReport grad_check(const CommaConfig& model_cfg, const GradCheckSetup& setup, std::uint64_t seed,
                           const GradientFn& analytic_override = {});

}  // namespace comma
