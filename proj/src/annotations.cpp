#include "comma/annotations.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace comma {

void SampleAnnotation::validate() const {
    if (resolution.t == 0 || resolution.h == 0 || resolution.w == 0) {
        throw std::invalid_argument(sample_id + ": resolution extents must be positive");
    }
    for (const auto& f : frames) {
        if (f.frame_index >= resolution.t) {
            throw std::invalid_argument(sample_id + ": frame " + std::to_string(f.frame_index) +
                                        " outside clip");
        }
        if (f.relevant && f.boxes.empty()) {
            throw std::invalid_argument(sample_id + ": relevant frame " + std::to_string(f.frame_index) +
                                        " has no boxes");
        }
        for (const auto& b : f.boxes) {
            if (b.w == 0 || b.h == 0 || b.x + b.w > resolution.w || b.y + b.h > resolution.h) {
                throw std::invalid_argument(sample_id + ": box outside frame " +
                                            std::to_string(f.frame_index));
            }
        }
    }
}

std::string to_json_line(const SampleAnnotation& a) {
    nlohmann::ordered_json j;
    j["sample_id"] = a.sample_id;
    j["sentence"] = a.sentence;
    j["resolution"] = {a.resolution.t, a.resolution.h, a.resolution.w};
    auto frames = nlohmann::ordered_json::array();
    for (const auto& f : a.frames) {
        auto boxes = nlohmann::ordered_json::array();
        for (const auto& b : f.boxes) {
            boxes.push_back({b.x, b.y, b.w, b.h});
        }
        frames.push_back({{"frame", f.frame_index}, {"relevant", f.relevant}, {"boxes", boxes}});
    }
    j["frames"] = frames;
    return j.dump();
}

SampleAnnotation parse_json_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    SampleAnnotation a;
    a.sample_id = j.at("sample_id").get<std::string>();
    a.sentence = j.at("sentence").get<std::string>();
    const auto& r = j.at("resolution");
    if (!r.is_array() || r.size() != 3) {
        throw std::invalid_argument(a.sample_id + ": resolution must be [T0, H0, W0]");
    }
    a.resolution = {r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<std::size_t>()};
    for (const auto& f : j.at("frames")) {
        FrameAnnotation fa;
        fa.frame_index = f.at("frame").get<std::size_t>();
        fa.relevant = f.at("relevant").get<bool>();
        for (const auto& b : f.at("boxes")) {
            if (!b.is_array() || b.size() != 4) {
                throw std::invalid_argument(a.sample_id + ": boxes must be [x, y, w, h]");
            }
            fa.boxes.push_back(
                {b[0].get<std::size_t>(), b[1].get<std::size_t>(), b[2].get<std::size_t>(), b[3].get<std::size_t>()});
        }
        a.frames.push_back(std::move(fa));
    }
    a.validate();
    return a;
}

void write_annotations(std::ostream& out, const std::vector<SampleAnnotation>& records) {
    for (const auto& r : records) {
        out << to_json_line(r) << '\n';
    }
}

std::vector<SampleAnnotation> read_annotations(std::istream& in) {
    std::vector<SampleAnnotation> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        out.push_back(parse_json_line(line));
    }
    return out;
}

void save_annotations(const std::filesystem::path& path, const std::vector<SampleAnnotation>& records) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    write_annotations(out, records);
}

std::vector<SampleAnnotation> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("missing annotation file " + path.string());
    }
    return read_annotations(in);
}

}  // namespace comma
