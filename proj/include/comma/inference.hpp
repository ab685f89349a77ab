#pragma once

#include "comma/annotations.hpp"
#include "comma/masks.hpp"
#include "comma/model.hpp"
#include "comma/tensor.hpp"

#include <array>
#include <filesystem>

namespace comma {

/// Non-negative T × H × W attention map.
struct Heatmap {
    Tensor values;

    std::size_t frames() const { return values.extent(0); }
    std::size_t height() const { return values.extent(1); }
    std::size_t width() const { return values.extent(2); }
    double at(std::size_t t, std::size_t y, std::size_t x) const {
        return values[(t * height() + y) * width() + x];
    }
};

struct PixelLocation {
    std::size_t t = 0;
    std::size_t y = 0;
    std::size_t x = 0;

    friend bool operator==(const PixelLocation&, const PixelLocation&) = default;
};

/// Residual-aware rollout over the CA1, SA, CA2 weight matrices:
/// Â = row_normalize(0.5 (A + I)) per layer, R = Â_CA2 · Â_SA · Â_CA1.
/// Throws std::invalid_argument if an input row does not sum to one.
Tensor attention_rollout(const std::array<Tensor, 3>& layer_weights, const ModalityLayout& layout);

/// Mean over word rows of the word → region block of R, as a T × H × W map.
Heatmap heatmap_from_rollout(const Tensor& rollout, const ModalityLayout& layout);

/// Trilinear interpolation with aligned corners. Throws
/// std::invalid_argument if the target is smaller than the source.
Heatmap upsample(const Heatmap& heatmap, const Resolution& target);

/// Global argmax; ties go to the smallest (t, y, x).
PixelLocation mode_pixel(const Heatmap& heatmap);
/// Argmax within frame t, same tie rule.
PixelLocation mode_pixel_in_frame(const Heatmap& heatmap, std::size_t t);

struct Grounding {
    Heatmap coarse;
    Heatmap heatmap;  // at the input resolution
    PixelLocation pixel;
};

/// embed -> forward -> rollout -> word mean -> upsample -> mode pixel.
Grounding ground(const CommaParams& params, SelfAttentionVariant variant, const Tensor& clip_features,
                 const Tensor& word_features, const Resolution& target);

/// One P2 PGM per frame (frame_000.pgm, ...), scaled to 0–255 by the global
/// maximum, plus heatmap.csv with columns t,y,x,value.
void export_heatmap(const std::filesystem::path& dir, const Heatmap& heatmap);
Heatmap read_heatmap_csv(const std::filesystem::path& path, const Resolution& res);

}  // namespace comma
