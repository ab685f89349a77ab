#pragma once

#include "comma/annotations.hpp"
#include "comma/inference.hpp"
#include "comma/model.hpp"
#include "comma/synth.hpp"

#include <span>
#include <string>

namespace comma {

struct EvalReport {
    std::size_t hits = 0;
    std::size_t misses = 0;

    std::size_t evaluated() const noexcept { return hits + misses; }
    /// hits / (hits + misses); 0 when nothing was evaluated.
    double accuracy() const noexcept {
        return evaluated() ? static_cast<double>(hits) / static_cast<double>(evaluated()) : 0.0;
    }
    void record(bool hit) noexcept { (hit ? hits : misses) += 1; }

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// True iff the pixel lies inside any box (inclusive bounds).
bool pointing_hit(const PixelLocation& p, std::span<const BoundingBox> boxes);

/// Per-frame mode-pixel prediction for every relevant annotated frame.
/// Throws std::invalid_argument("no evaluable frames") when no frame is
/// relevant, and on annotations that reference frames outside the clip.
EvalReport evaluate(const CommaParams& params, SelfAttentionVariant variant,
                    std::span<const GroundingSample> samples, unsigned threads = 1);

/// Predicts (⌊H₀/2⌋, ⌊W₀/2⌋) in every relevant frame.
EvalReport center_prior(std::span<const GroundingSample> samples);

/// Scores fixed per-frame predictions against annotations. `predict`
/// maps (sample index, frame index) to a pixel.
template <typename Predict>
EvalReport score_frames(std::span<const GroundingSample> samples, Predict&& predict);

std::string to_json(const EvalReport& r);

}  // namespace comma

#include <stdexcept>

namespace comma {

template <typename Predict>
EvalReport score_frames(std::span<const GroundingSample> samples, Predict&& predict) {
    EvalReport report;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& a = samples[i].annotation;
        a.validate();
        for (const auto& f : a.frames) {
            if (!f.relevant) {
                continue;
            }
            report.record(pointing_hit(predict(i, f.frame_index), f.boxes));
        }
    }
    if (report.evaluated() == 0) {
        throw std::invalid_argument("no evaluable frames");
    }
    return report;
}

}  // namespace comma
