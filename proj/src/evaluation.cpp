#include "comma/evaluation.hpp"

#include "comma/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <vector>

namespace comma {

bool pointing_hit(const PixelLocation& p, std::span<const BoundingBox> boxes) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const BoundingBox& b) { return b.contains(p.x, p.y); });
}

EvalReport evaluate(const CommaParams& params, SelfAttentionVariant variant,
                    std::span<const GroundingSample> samples, unsigned threads) {
    for (const auto& s : samples) {
        s.annotation.validate();
    }
    // Per-frame predictions only; full-resolution heatmaps are dropped early.
    std::vector<std::vector<PixelLocation>> predictions(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = samples[i];
        const Heatmap h =
            ground(params, variant, s.clip_features, s.word_features, s.annotation.resolution).heatmap;
        for (std::size_t t = 0; t < h.frames(); ++t) {
            predictions[i].push_back(mode_pixel_in_frame(h, t));
        }
    });
    return score_frames(samples, [&](std::size_t i, std::size_t frame) { return predictions[i][frame]; });
}

EvalReport center_prior(std::span<const GroundingSample> samples) {
    return score_frames(samples, [&](std::size_t i, std::size_t frame) {
        const auto& res = samples[i].annotation.resolution;
        return PixelLocation{frame, res.h / 2, res.w / 2};
    });
}

std::string to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["hits"] = r.hits;
    j["misses"] = r.misses;
    j["accuracy"] = r.accuracy();
    return j.dump();
}

}  // namespace comma
