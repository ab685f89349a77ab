#include "comma/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace comma {

void CommaConfig::validate() const {
    if (d_video_in == 0 || d_word_in == 0 || d_model == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
}

std::vector<std::pair<std::string, Tensor*>> CommaParams::named() {
    return {
        {"video_proj.weight", &video_proj.weight},
        {"video_proj.bias", &video_proj.bias},
        {"word_proj.fc1.weight", &word_proj.fc1.weight},
        {"word_proj.fc1.bias", &word_proj.fc1.bias},
        {"word_proj.fc2.weight", &word_proj.fc2.weight},
        {"word_proj.fc2.bias", &word_proj.fc2.bias},
        {"sa.w_k", &sa_w_k},
        {"sa.w_q", &sa_w_q},
        {"sa.w_v", &sa_w_v},
        {"word_value.fc1.weight", &word_value.fc1.weight},
        {"word_value.fc1.bias", &word_value.fc1.bias},
        {"word_value.fc2.weight", &word_value.fc2.weight},
        {"word_value.fc2.bias", &word_value.fc2.bias},
    };
}

std::vector<std::pair<std::string, const Tensor*>> CommaParams::named() const {
    auto mutable_view = const_cast<CommaParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, t] : mutable_view) {
        out.emplace_back(name, t);
    }
    return out;
}

AttentionLayerParams CommaParams::self_attention() const {
    return AttentionLayerParams::self(sa_w_k, sa_w_q, sa_w_v);
}

namespace {

Tensor xavier(std::mt19937_64& rng, std::size_t out, std::size_t in) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor t({out, in});
    for (auto& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

LinearParams make_linear(std::mt19937_64& rng, std::size_t out, std::size_t in) {
    return {xavier(rng, out, in), Tensor({out, 1})};
}

}  // namespace

CommaParams init_params(const CommaConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.d_model;
    CommaParams p;
    p.video_proj = make_linear(rng, d, cfg.d_video_in);
    p.word_proj = {make_linear(rng, d, cfg.d_word_in), make_linear(rng, d, d)};
    p.sa_w_k = xavier(rng, d, d);
    p.sa_w_q = xavier(rng, d, d);
    p.sa_w_v = xavier(rng, d, d);
    p.word_value = {make_linear(rng, d, d), make_linear(rng, d, d)};
    return p;
}

Tensor flatten_clip(const Tensor& clip_features) {
    if (clip_features.rank() != 4) {
        throw std::invalid_argument("clip features must be d × T × H × W, got " +
                                    shape_string(clip_features.shape()));
    }
    const auto& s = clip_features.shape();
    return clip_features.reshaped({s[0], s[1] * s[2] * s[3]});
}

ModalityLayout layout_for(const Tensor& clip_features, const Tensor& word_features) {
    if (clip_features.rank() != 4 || word_features.rank() != 2) {
        throw std::invalid_argument("expected d × T × H × W clip features and d × N_L word features");
    }
    const auto& s = clip_features.shape();
    return ModalityLayout(word_features.cols(), s[1], s[2], s[3]);
}

ParamVars bind_params(Tape& tape, const CommaParams& params) {
    ParamVars v;
    std::array<Var*, 13> slots = {&v.video_w,  &v.video_b,  &v.word_w1,  &v.word_b1,  &v.word_w2,
                                  &v.word_b2,  &v.sa_w_k,   &v.sa_w_q,   &v.sa_w_v,   &v.value_w1,
                                  &v.value_b1, &v.value_w2, &v.value_b2};
    const auto named = params.named();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        *slots[i] = tape.parameter(named[i].first, *named[i].second);
    }
    return v;
}

EmbeddedVars embed(Tape& tape, const ParamVars& p, Var clip_flat, Var word_features) {
    const Tensor& clip = tape.value(clip_flat);
    const Tensor& words = tape.value(word_features);
    if (clip.rank() != 2 || clip.rows() != tape.value(p.video_w).cols()) {
        throw std::invalid_argument("embed: clip feature dimension does not match video projection");
    }
    if (words.rank() != 2 || words.rows() != tape.value(p.word_w1).cols()) {
        throw std::invalid_argument("embed: word feature dimension does not match word projection");
    }
    return {tape.linear(clip_flat, p.video_w, p.video_b),
            tape.mlp2(word_features, p.word_w1, p.word_b1, p.word_w2, p.word_b2)};
}

Var word_values(Tape& tape, const ParamVars& p, Var words_embedded) {
    return tape.mlp2(words_embedded, p.value_w1, p.value_b1, p.value_w2, p.value_b2);
}

CommaVars forward(Tape& tape, const ParamVars& p, Var clip_embedded, Var words_embedded,
                  const ModalityLayout& layout, SelfAttentionVariant variant) {
    const Tensor& c = tape.value(clip_embedded);
    const Tensor& s = tape.value(words_embedded);
    if (c.rank() != 2 || s.rank() != 2 || c.rows() != s.rows()) {
        throw std::invalid_argument("forward: embedded modalities must share dimension D");
    }
    if (c.cols() != layout.n_regions() || s.cols() != layout.n_words) {
        throw std::invalid_argument("forward: token counts do not match layout");
    }
    const AttentionMask ca = cross_modal_mask(layout);
    const AttentionMask sa = self_attention_mask(layout, variant);

    const Var y0 = tape.concat_columns(words_embedded, clip_embedded);
    const auto ca1 = attend(tape, y0, std::nullopt, ca);
    const auto sa1 = attend(tape, ca1.context, ProjectionVars{p.sa_w_k, p.sa_w_q, p.sa_w_v}, sa);
    const auto ca2 = attend(tape, sa1.context, std::nullopt, ca);

    CommaVars out;
    out.s_ca2 = tape.slice_columns(ca2.context, 0, layout.n_words);
    out.c_ca2 = tape.slice_columns(ca2.context, layout.n_words, layout.total());
    out.layer_weights = {ca1.weights, sa1.weights, ca2.weights};
    return out;
}

PooledVars pool(Tape& tape, const CommaVars& output) {
    return {tape.mean_columns(output.c_ca2), tape.mean_columns(output.s_ca2)};
}

Embedded embed(const Tensor& clip_features, const Tensor& word_features, const CommaParams& params) {
    Tape tape;
    const auto p = bind_params(tape, params);
    const auto e = embed(tape, p, tape.input(flatten_clip(clip_features)), tape.input(word_features));
    return {tape.value(e.clip), tape.value(e.words)};
}

CommaOutput forward(const Tensor& clip_embedded, const Tensor& words_embedded, const ModalityLayout& layout,
                    const CommaParams& params, SelfAttentionVariant variant) {
    Tape tape;
    const auto p = bind_params(tape, params);
    const auto out = forward(tape, p, tape.input(clip_embedded), tape.input(words_embedded), layout, variant);
    return {tape.value(out.c_ca2),
            tape.value(out.s_ca2),
            {tape.value(out.layer_weights[0]), tape.value(out.layer_weights[1]),
             tape.value(out.layer_weights[2])}};
}

Pooled pool(const CommaOutput& output, const ModalityLayout& layout) {
    if (output.c_ca2.cols() != layout.n_regions() || output.s_ca2.cols() != layout.n_words) {
        throw std::invalid_argument("pool: output does not match layout");
    }
    const std::size_t d = output.c_ca2.rows();
    return {mean_over(output.c_ca2, {1}).reshaped({d, 1}), mean_over(output.s_ca2, {1}).reshaped({d, 1})};
}

namespace {

constexpr const char* kCheckpointFormat = "comma-checkpoint-v1";

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const CommaConfig& cfg, const CommaParams& params) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["config"] = {
        {"d_video_in", cfg.d_video_in},
        {"d_word_in", cfg.d_word_in},
        {"d_model", cfg.d_model},
        {"sa_variant", std::string(to_string(cfg.sa_variant))},
    };
    manifest["seed"] = cfg.seed;
    auto entries = nlohmann::ordered_json::array();
    for (const auto& [name, t] : params.named()) {
        const std::string file = name + ".cmma";
        save_tensor(dir / file, *t);
        entries.push_back({{"name", name}, {"file", file}, {"shape", t->shape()}});
    }
    manifest["parameters"] = entries;
    std::ofstream out(dir / "checkpoint.json");
    if (!out) {
        throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
    }
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) {
        throw std::runtime_error("no checkpoint manifest in " + dir.string());
    }
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.value("format", "") != kCheckpointFormat) {
        throw std::runtime_error("unsupported checkpoint format in " + dir.string());
    }
    Checkpoint ck;
    const auto& c = manifest.at("config");
    ck.config.d_video_in = c.at("d_video_in").get<std::size_t>();
    ck.config.d_word_in = c.at("d_word_in").get<std::size_t>();
    ck.config.d_model = c.at("d_model").get<std::size_t>();
    ck.config.sa_variant = parse_sa_variant(c.at("sa_variant").get<std::string>());
    ck.config.seed = manifest.at("seed").get<std::uint64_t>();
    ck.config.validate();

    ck.params = init_params(ck.config);
    auto slots = ck.params.named();
    const auto& entries = manifest.at("parameters");
    if (entries.size() != slots.size()) {
        throw std::runtime_error("checkpoint parameter count mismatch");
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& e = entries[i];
        if (e.at("name").get<std::string>() != slots[i].first) {
            throw std::runtime_error("checkpoint parameter order mismatch at " + slots[i].first);
        }
        Tensor t = load_tensor(dir / e.at("file").get<std::string>());
        if (t.shape() != slots[i].second->shape()) {
            throw std::runtime_error("checkpoint shape mismatch for " + slots[i].first);
        }
        *slots[i].second = std::move(t);
    }
    return ck;
}

}  // namespace comma
