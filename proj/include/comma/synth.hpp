#pragma once

#include "comma/annotations.hpp"
#include "comma/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace comma {

/// Synthetic narrated-grounding benchmark. Every vocabulary token owns a
/// fixed pair of random prototypes (word vector, visual vector). A sample
/// names a target token plus fillers and plants the target's visual
/// prototype in one grid cell of every frame where it is present.
struct SynthConfig {
    std::size_t vocab_size = 16;
    std::size_t n_samples = 640;
    std::size_t grid_t = 2;
    std::size_t grid_h = 4;
    std::size_t grid_w = 4;
    std::size_t d_video_in = 16;
    std::size_t d_word_in = 16;
    std::size_t words_per_sample = 2;
    double noise_std = 0.1;
    /// Cells per frame holding prototypes of tokens absent from the sentence.
    std::size_t distractor_count = 3;
    /// Probability that the target is absent from a grid frame.
    double temporal_jitter = 0.25;
    Resolution resolution{16, 64, 64};
    double train_fraction = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GridCell {
    std::size_t h = 0;
    std::size_t w = 0;

    friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct GroundingSample {
    std::string id;
    std::string sentence;
    Tensor clip_features;  // d_video_in × T × H × W
    Tensor word_features;  // d_word_in × N_L
    SampleAnnotation annotation;
    /// Planted cell per grid frame; empty where the target is absent.
    std::vector<std::optional<GridCell>> target_cells;
};

struct Dataset {
    SynthConfig config;
    std::vector<GroundingSample> train;
    std::vector<GroundingSample> test;
};

/// Deterministic in cfg.seed. Feature values are rounded to float32 so a
/// saved dataset reloads bit-identically. Throws std::invalid_argument on
/// infeasible configurations (e.g. more distractors than free cells, or
/// temporal_jitter = 1 which leaves no relevant frames).
Dataset generate(const SynthConfig& cfg);

/// Grid frame covering input frame `frame`.
std::size_t grid_frame_of(std::size_t frame, std::size_t grid_t, std::size_t res_t);
/// Pixel footprint of a grid cell at the input resolution.
BoundingBox cell_footprint(const GridCell& cell, std::size_t grid_h, std::size_t grid_w, const Resolution& res);

struct ChanceEstimate {
    double accuracy = 0.0;
    double ci_low = 0.0;   // 95% Wilson interval
    double ci_high = 0.0;
    std::size_t draws = 0;
};

/// Pointing accuracy of a uniformly random pixel over the relevant frames
/// of `samples`, estimated from `draws` Monte-Carlo draws.
ChanceEstimate chance_accuracy(const std::vector<GroundingSample>& samples, std::size_t draws = 10000,
                               std::uint64_t seed = 0);
/// Same, on the test split of generate(cfg).
ChanceEstimate chance_accuracy(const SynthConfig& cfg, std::size_t draws = 10000);

// On disk: manifest.json (config echo and split lists), annotations.jsonl,
// and features/<id>.clip.cmma / features/<id>.words.cmma.

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace comma
