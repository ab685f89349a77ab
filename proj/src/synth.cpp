#include "comma/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace comma {

void SynthConfig::validate() const {
    if (vocab_size == 0 || n_samples == 0 || grid_t == 0 || grid_h == 0 || grid_w == 0 || d_video_in == 0 ||
        d_word_in == 0 || words_per_sample == 0) {
        throw std::invalid_argument("synthetic benchmark extents must be positive");
    }
    if (vocab_size < words_per_sample) {
        throw std::invalid_argument("vocab_size must be at least words_per_sample");
    }
    if (distractor_count > 0 && vocab_size == words_per_sample) {
        throw std::invalid_argument("distractors need tokens that are absent from the sentence");
    }
    if (distractor_count + 1 > grid_h * grid_w) {
        throw std::invalid_argument("distractor_count exceeds the free cells of a frame");
    }
    if (!(noise_std >= 0.0)) {
        throw std::invalid_argument("noise_std must be non-negative");
    }
    if (!(temporal_jitter >= 0.0) || temporal_jitter > 1.0) {
        throw std::invalid_argument("temporal_jitter must lie in [0, 1]");
    }
    if (temporal_jitter >= 1.0) {
        throw std::invalid_argument("temporal_jitter = 1 leaves no relevant frames");
    }
    if (!(train_fraction > 0.0) || train_fraction > 1.0) {
        throw std::invalid_argument("train_fraction must lie in (0, 1]");
    }
    if (resolution.t < grid_t || resolution.h < grid_h || resolution.w < grid_w) {
        throw std::invalid_argument("input resolution must not be smaller than the feature grid");
    }
    if (resolution.t % grid_t || resolution.h % grid_h || resolution.w % grid_w) {
        throw std::invalid_argument("input resolution must be a multiple of the feature grid");
    }
}

std::size_t grid_frame_of(std::size_t frame, std::size_t grid_t, std::size_t res_t) {
    return frame * grid_t / res_t;
}

BoundingBox cell_footprint(const GridCell& cell, std::size_t grid_h, std::size_t grid_w, const Resolution& res) {
    const std::size_t ch = res.h / grid_h;
    const std::size_t cw = res.w / grid_w;
    return {cell.w * cw, cell.h * ch, cw, ch};
}

namespace {

SampleAnnotation annotate(const std::string& id, const std::string& sentence,
                          const std::vector<std::optional<GridCell>>& cells, const SynthConfig& cfg) {
    SampleAnnotation a;
    a.sample_id = id;
    a.sentence = sentence;
    a.resolution = cfg.resolution;
    for (std::size_t f = 0; f < cfg.resolution.t; ++f) {
        FrameAnnotation fa;
        fa.frame_index = f;
        const auto& cell = cells[grid_frame_of(f, cfg.grid_t, cfg.resolution.t)];
        if (cell) {
            fa.relevant = true;
            fa.boxes.push_back(cell_footprint(*cell, cfg.grid_h, cfg.grid_w, cfg.resolution));
        }
        a.frames.push_back(std::move(fa));
    }
    return a;
}

std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%05zu", index);
    return buf;
}

}  // namespace

Dataset generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> word_proto(cfg.vocab_size, std::vector<double>(cfg.d_word_in));
    std::vector<std::vector<double>> visual_proto(cfg.vocab_size, std::vector<double>(cfg.d_video_in));
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        for (auto& x : word_proto[v]) {
            x = gauss(rng);
        }
        for (auto& x : visual_proto[v]) {
            x = gauss(rng);
        }
    }

    const std::size_t T = cfg.grid_t, H = cfg.grid_h, W = cfg.grid_w;
    const std::size_t dv = cfg.d_video_in;
    const std::size_t n_train =
        std::min(cfg.n_samples, static_cast<std::size_t>(std::llround(cfg.n_samples * cfg.train_fraction)));

    Dataset data;
    data.config = cfg;
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
        GroundingSample sample;
        sample.id = sample_id(s);

        const std::size_t target = std::uniform_int_distribution<std::size_t>(0, cfg.vocab_size - 1)(rng);
        std::vector<std::size_t> others;
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
            if (v != target) {
                others.push_back(v);
            }
        }
        std::shuffle(others.begin(), others.end(), rng);
        std::vector<std::size_t> tokens(others.begin(), others.begin() + (cfg.words_per_sample - 1));
        tokens.push_back(target);
        std::shuffle(tokens.begin(), tokens.end(), rng);
        const std::vector<std::size_t> absent(others.begin() + (cfg.words_per_sample - 1), others.end());

        for (std::size_t j = 0; j < tokens.size(); ++j) {
            sample.sentence += (j ? " w" : "w") + std::to_string(tokens[j]);
        }

        std::bernoulli_distribution missing(cfg.temporal_jitter);
        std::vector<bool> present(T);
        bool any = false;
        for (std::size_t t = 0; t < T; ++t) {
            present[t] = !missing(rng);
            any = any || present[t];
        }
        if (!any) {
            present[std::uniform_int_distribution<std::size_t>(0, T - 1)(rng)] = true;
        }

        Tensor clip({dv, T, H, W});
        auto put = [&](std::size_t t, std::size_t cell, const std::vector<double>& proto) {
            for (std::size_t c = 0; c < dv; ++c) {
                clip[(c * T + t) * H * W + cell] = proto[c];
            }
        };
        sample.target_cells.assign(T, std::nullopt);
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<std::size_t> cells(H * W);
            std::iota(cells.begin(), cells.end(), std::size_t{0});
            std::shuffle(cells.begin(), cells.end(), rng);
            std::size_t next = 0;
            if (present[t]) {
                const std::size_t cell = cells[next++];
                sample.target_cells[t] = GridCell{cell / W, cell % W};
                put(t, cell, visual_proto[target]);
            }
            for (std::size_t d = 0; d < cfg.distractor_count; ++d) {
                const std::size_t token =
                    absent[std::uniform_int_distribution<std::size_t>(0, absent.size() - 1)(rng)];
                put(t, cells[next++], visual_proto[token]);
            }
        }
        if (cfg.noise_std > 0.0) {
            for (auto& x : clip.data()) {
                x += cfg.noise_std * gauss(rng);
            }
        }
        sample.clip_features = round_to_float(clip);

        Tensor words({cfg.d_word_in, tokens.size()});
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            for (std::size_t c = 0; c < cfg.d_word_in; ++c) {
                const double noise = cfg.noise_std > 0.0 ? cfg.noise_std * gauss(rng) : 0.0;
                words(c, j) = word_proto[tokens[j]][c] + noise;
            }
        }
        sample.word_features = round_to_float(words);
        sample.annotation = annotate(sample.id, sample.sentence, sample.target_cells, cfg);

        (s < n_train ? data.train : data.test).push_back(std::move(sample));
    }
    return data;
}

ChanceEstimate chance_accuracy(const std::vector<GroundingSample>& samples, std::size_t draws,
                               std::uint64_t seed) {
    struct Frame {
        const GroundingSample* sample;
        const FrameAnnotation* frame;
    };
    std::vector<Frame> frames;
    for (const auto& s : samples) {
        for (const auto& f : s.annotation.frames) {
            if (f.relevant) {
                frames.push_back({&s, &f});
            }
        }
    }
    if (frames.empty() || draws == 0) {
        throw std::invalid_argument("chance_accuracy: no evaluable frames");
    }
    std::mt19937_64 rng(seed);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < draws; ++i) {
        const auto& f = frames[std::uniform_int_distribution<std::size_t>(0, frames.size() - 1)(rng)];
        const auto& res = f.sample->annotation.resolution;
        const std::size_t y = std::uniform_int_distribution<std::size_t>(0, res.h - 1)(rng);
        const std::size_t x = std::uniform_int_distribution<std::size_t>(0, res.w - 1)(rng);
        hits += std::any_of(f.frame->boxes.begin(), f.frame->boxes.end(),
                            [&](const BoundingBox& b) { return b.contains(x, y); });
    }
    const double n = static_cast<double>(draws);
    const double p = static_cast<double>(hits) / n;
    const double z = 1.959963984540054;
    const double denom = 1.0 + z * z / n;
    const double centre = (p + z * z / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    return {p, std::max(0.0, centre - half), std::min(1.0, centre + half), draws};
}

ChanceEstimate chance_accuracy(const SynthConfig& cfg, std::size_t draws) {
    const Dataset data = generate(cfg);
    return chance_accuracy(data.test.empty() ? data.train : data.test, draws, cfg.seed);
}

namespace {

constexpr const char* kDatasetFormat = "comma-dataset-v1";

nlohmann::ordered_json config_json(const SynthConfig& c) {
    return {
        {"vocab_size", c.vocab_size},
        {"n_samples", c.n_samples},
        {"grid_t", c.grid_t},
        {"grid_h", c.grid_h},
        {"grid_w", c.grid_w},
        {"d_video_in", c.d_video_in},
        {"d_word_in", c.d_word_in},
        {"words_per_sample", c.words_per_sample},
        {"noise_std", c.noise_std},
        {"distractor_count", c.distractor_count},
        {"temporal_jitter", c.temporal_jitter},
        {"res_t", c.resolution.t},
        {"res_h", c.resolution.h},
        {"res_w", c.resolution.w},
        {"train_fraction", c.train_fraction},
        {"seed", c.seed},
    };
}

SynthConfig config_from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.n_samples = j.at("n_samples").get<std::size_t>();
    c.grid_t = j.at("grid_t").get<std::size_t>();
    c.grid_h = j.at("grid_h").get<std::size_t>();
    c.grid_w = j.at("grid_w").get<std::size_t>();
    c.d_video_in = j.at("d_video_in").get<std::size_t>();
    c.d_word_in = j.at("d_word_in").get<std::size_t>();
    c.words_per_sample = j.at("words_per_sample").get<std::size_t>();
    c.noise_std = j.at("noise_std").get<double>();
    c.distractor_count = j.at("distractor_count").get<std::size_t>();
    c.temporal_jitter = j.at("temporal_jitter").get<double>();
    c.resolution = {j.at("res_t").get<std::size_t>(), j.at("res_h").get<std::size_t>(),
                    j.at("res_w").get<std::size_t>()};
    c.train_fraction = j.at("train_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

std::vector<std::optional<GridCell>> cells_from_annotation(const SampleAnnotation& a, const SynthConfig& cfg) {
    std::vector<std::optional<GridCell>> cells(cfg.grid_t);
    const std::size_t ch = a.resolution.h / cfg.grid_h;
    const std::size_t cw = a.resolution.w / cfg.grid_w;
    for (const auto& f : a.frames) {
        if (f.relevant && !f.boxes.empty()) {
            const auto& b = f.boxes.front();
            cells[grid_frame_of(f.frame_index, cfg.grid_t, a.resolution.t)] = GridCell{b.y / ch, b.x / cw};
        }
    }
    return cells;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
    std::filesystem::create_directories(dir / "features");
    nlohmann::ordered_json manifest;
    manifest["format"] = kDatasetFormat;
    manifest["config"] = config_json(data.config);
    auto ids = [](const std::vector<GroundingSample>& samples) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& s : samples) {
            arr.push_back(s.id);
        }
        return arr;
    };
    manifest["train"] = ids(data.train);
    manifest["test"] = ids(data.test);

    std::vector<SampleAnnotation> records;
    for (const auto* split : {&data.train, &data.test}) {
        for (const auto& s : *split) {
            save_tensor(dir / "features" / (s.id + ".clip.cmma"), s.clip_features);
            save_tensor(dir / "features" / (s.id + ".words.cmma"), s.word_features);
            records.push_back(s.annotation);
        }
    }
    save_annotations(dir / "annotations.jsonl", records);
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw std::runtime_error("cannot write dataset manifest in " + dir.string());
    }
    out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw std::runtime_error("no dataset manifest in " + dir.string());
    }
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.value("format", "") != kDatasetFormat) {
        throw std::runtime_error("unsupported dataset format in " + dir.string());
    }
    Dataset data;
    data.config = config_from_json(manifest.at("config"));

    const auto records = load_annotations(dir / "annotations.jsonl");
    auto find = [&](const std::string& id) -> const SampleAnnotation& {
        for (const auto& r : records) {
            if (r.sample_id == id) {
                return r;
            }
        }
        throw std::runtime_error("no annotation for sample " + id);
    };
    auto load_split = [&](const nlohmann::json& ids, std::vector<GroundingSample>& out) {
        for (const auto& idj : ids) {
            GroundingSample s;
            s.id = idj.get<std::string>();
            s.annotation = find(s.id);
            s.sentence = s.annotation.sentence;
            s.clip_features = load_tensor(dir / "features" / (s.id + ".clip.cmma"));
            s.word_features = load_tensor(dir / "features" / (s.id + ".words.cmma"));
            s.target_cells = cells_from_annotation(s.annotation, data.config);
            out.push_back(std::move(s));
        }
    };
    load_split(manifest.at("train"), data.train);
    load_split(manifest.at("test"), data.test);
    return data;
}

}  // namespace comma
