#pragma once

#include "comma/config.hpp"
#include "comma/evaluation.hpp"
#include "comma/inference.hpp"
#include "comma/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace comma {

/// Generates the synthetic benchmark and writes it to `out`.
Dataset gen_data_command(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

struct TrainOutcome {
    CommaConfig model;
    TrainResult result;
};

/// Trains on the training split of the dataset in `data`. Writes the
/// checkpoint files and loss.csv into `out`; one progress line per epoch
/// goes to `log`.
TrainOutcome train_command(const RunConfig& cfg, const std::filesystem::path& data,
                           const std::filesystem::path& out, std::ostream& log);

struct EvalMetrics {
    std::string sa_variant;
    std::size_t samples = 0;
    EvalReport model;
    EvalReport center_prior;
    ChanceEstimate chance;
};

/// Scores a checkpoint on the test split next to the center prior and the
/// uniform-random baseline.
EvalMetrics eval_command(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                         const std::filesystem::path& data);

/// {"split", "samples", "sa_variant", "model", "center_prior", "chance"}
/// where model and center_prior are {hits, misses, accuracy} and chance is
/// {accuracy, ci_low, ci_high, draws}.
std::string to_json(const EvalMetrics& m);

/// Grounds one sample and writes frame_NNN.pgm, heatmap.csv and pixel.json
/// into `out`. With `dump_masks` also writes mask_ca.txt and mask_sa.txt.
/// Throws std::invalid_argument on an unknown sample id.
Grounding ground_command(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                         const std::string& sample_id, const std::filesystem::path& out, bool dump_masks);

struct GradCheckRun {
    LossMode mode = LossMode::Sentence;
    GradCheckReport report;
};

/// Gradient check of the full model for each mode. `corrupt_backward`
/// scales the analytic sa.w_q gradient by 1.01 to demonstrate detection.
std::vector<GradCheckRun> grad_check_command(const RunConfig& cfg, const std::vector<LossMode>& modes,
                                             bool corrupt_backward = false);

void print_grad_check(std::ostream& out, const std::vector<GradCheckRun>& runs, double tolerance);

struct AblationRow {
    SelfAttentionVariant variant = SelfAttentionVariant::Spatiotemporal;
    LossMode mode = LossMode::Sentence;
    std::size_t epochs = 0;
    double first_loss = 0.0;
    double final_loss = 0.0;
    EvalReport report;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    EvalReport center_prior;
    ChanceEstimate chance;
};

/// Trains and evaluates one model per (variant, mode) cell for
/// cfg.ablation_epochs epochs each.
AblationTable ablation_command(const RunConfig& cfg, const std::filesystem::path& data,
                               const std::vector<SelfAttentionVariant>& variants,
                               const std::vector<LossMode>& modes, std::ostream& log);

void write_ablation_csv(std::ostream& out, const AblationTable& table);
void write_ablation_markdown(std::ostream& out, const AblationTable& table);

}  // namespace comma
