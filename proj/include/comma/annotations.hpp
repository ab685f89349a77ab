#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace comma {

/// Input-resolution extents of a clip: frames, height, width.
struct Resolution {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    friend bool operator==(const Resolution&, const Resolution&) = default;
};

/// Pixel rectangle with an inclusive top-left corner: it covers
/// x ≤ px ≤ x + w − 1 and y ≤ py ≤ y + h − 1.
struct BoundingBox {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t w = 1;
    std::size_t h = 1;

    bool contains(std::size_t px, std::size_t py) const noexcept {
        return px >= x && px < x + w && py >= y && py < y + h;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct FrameAnnotation {
    std::size_t frame_index = 0;
    std::vector<BoundingBox> boxes;
    bool relevant = false;

    friend bool operator==(const FrameAnnotation&, const FrameAnnotation&) = default;
};

/// One JSON Lines record:
///   {"sample_id": str, "sentence": str, "resolution": [T0, H0, W0],
///    "frames": [{"frame": int, "relevant": bool, "boxes": [[x, y, w, h], ...]}]}
struct SampleAnnotation {
    std::string sample_id;
    std::string sentence;
    Resolution resolution;
    std::vector<FrameAnnotation> frames;

    /// Throws std::invalid_argument on boxes outside the frame, frame
    /// indices outside the clip, or relevant frames without boxes.
    void validate() const;

    friend bool operator==(const SampleAnnotation&, const SampleAnnotation&) = default;
};

std::string to_json_line(const SampleAnnotation& a);
SampleAnnotation parse_json_line(const std::string& line);

void write_annotations(std::ostream& out, const std::vector<SampleAnnotation>& records);
std::vector<SampleAnnotation> read_annotations(std::istream& in);
void save_annotations(const std::filesystem::path& path, const std::vector<SampleAnnotation>& records);
std::vector<SampleAnnotation> load_annotations(const std::filesystem::path& path);

}  // namespace comma
