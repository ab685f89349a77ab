#include "comma/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace comma {

RunConfig::RunConfig() {
    train.learning_rate = 1e-3;
    train.epochs = 40;
    train.loss_mode = LossMode::Sentence;
}

SynthConfig RunConfig::synth_config() const {
    SynthConfig s = synth;
    s.seed = seed;
    return s;
}

CommaConfig RunConfig::model_config(std::size_t d_video_in, std::size_t d_word_in) const {
    CommaConfig m = model;
    m.d_video_in = d_video_in;
    m.d_word_in = d_word_in;
    m.seed = seed;
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
}

void RunConfig::validate() const {
    synth_config().validate();
    model_config(synth.d_video_in, synth.d_word_in).validate();
    train_config().validate();
    if (grad_check.d_model == 0 || grad_check.batch_size == 0 || grad_check.n_words == 0 ||
        grad_check.grid_t == 0 || grad_check.grid_h == 0 || grad_check.grid_w == 0) {
        throw std::invalid_argument("gc_* extents must be positive");
    }
    if (!(grad_check.step > 0.0) || !(grad_check.tolerance > 0.0)) {
        throw std::invalid_argument("gc_step and gc_tolerance must be positive");
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw std::invalid_argument("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || value.empty()) {
        bad_value(key, value, expected);
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Entry {
    ConfigKey key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Field>
Entry size_entry(std::string name, std::string doc, Field field) {
    const std::string key = name;
    return {{std::move(name), std::move(doc)},
            [key, field](RunConfig& c, const std::string& v) {
                field(c) = parse_number<std::size_t>(key, v, "a non-negative integer");
            },
            [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <typename Field>
Entry double_entry(std::string name, std::string doc, Field field) {
    const std::string key = name;
    return {{std::move(name), std::move(doc)},
            [key, field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(key, v, "a number"); },
            [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

template <typename Field>
Entry string_entry(std::string name, std::string doc, Field field) {
    return {{std::move(name), std::move(doc)},
            [field](RunConfig& c, const std::string& v) { field(c) = v; },
            [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); }};
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t;
        t.push_back({{"seed", "seed for data generation, initialization and batch shuffling"},
                     [](RunConfig& c, const std::string& v) {
                         c.seed = parse_number<std::uint64_t>("seed", v, "a non-negative integer");
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});

        t.push_back(size_entry("vocab_size", "number of token concepts", [](RunConfig& c) -> auto& {
            return c.synth.vocab_size;
        }));
        t.push_back(size_entry("n_samples", "generated samples, split into train and test",
                               [](RunConfig& c) -> auto& { return c.synth.n_samples; }));
        t.push_back(size_entry("grid_t", "feature grid frames", [](RunConfig& c) -> auto& { return c.synth.grid_t; }));
        t.push_back(size_entry("grid_h", "feature grid height", [](RunConfig& c) -> auto& { return c.synth.grid_h; }));
        t.push_back(size_entry("grid_w", "feature grid width", [](RunConfig& c) -> auto& { return c.synth.grid_w; }));
        t.push_back(size_entry("d_video_in", "visual feature dimension",
                               [](RunConfig& c) -> auto& { return c.synth.d_video_in; }));
        t.push_back(size_entry("d_word_in", "word feature dimension",
                               [](RunConfig& c) -> auto& { return c.synth.d_word_in; }));
        t.push_back(size_entry("words_per_sample", "words per narration (target plus fillers)",
                               [](RunConfig& c) -> auto& { return c.synth.words_per_sample; }));
        t.push_back(double_entry("noise_std", "Gaussian noise added to every feature",
                                 [](RunConfig& c) -> auto& { return c.synth.noise_std; }));
        t.push_back(size_entry("distractor_count", "cells per frame holding prototypes of absent tokens",
                               [](RunConfig& c) -> auto& { return c.synth.distractor_count; }));
        t.push_back(double_entry("temporal_jitter", "probability that the target is absent from a grid frame",
                                 [](RunConfig& c) -> auto& { return c.synth.temporal_jitter; }));
        t.push_back(size_entry("res_t", "input frames", [](RunConfig& c) -> auto& { return c.synth.resolution.t; }));
        t.push_back(size_entry("res_h", "input height", [](RunConfig& c) -> auto& { return c.synth.resolution.h; }));
        t.push_back(size_entry("res_w", "input width", [](RunConfig& c) -> auto& { return c.synth.resolution.w; }));
        t.push_back(double_entry("train_fraction", "share of samples in the training split",
                                 [](RunConfig& c) -> auto& { return c.synth.train_fraction; }));

        t.push_back(size_entry("d_model", "model width D", [](RunConfig& c) -> auto& { return c.model.d_model; }));
        t.push_back({{"sa_variant", "self-attention mask: spatial, temporal, spatial+temporal, spatiotemporal"},
                     [](RunConfig& c, const std::string& v) {
                         try {
                             c.model.sa_variant = parse_sa_variant(v);
                         } catch (const std::invalid_argument&) {
                             bad_value("sa_variant", v, "spatial, temporal, spatial+temporal or spatiotemporal");
                         }
                     },
                     [](const RunConfig& c) { return std::string(to_string(c.model.sa_variant)); }});

        t.push_back(double_entry("learning_rate", "AdamW peak learning rate",
                                 [](RunConfig& c) -> auto& { return c.train.learning_rate; }));
        t.push_back(size_entry("batch_size", "clip/narration pairs per batch",
                               [](RunConfig& c) -> auto& { return c.train.batch_size; }));
        t.push_back(size_entry("epochs", "training epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
        t.push_back(size_entry("warmup_epochs", "epochs of linear learning-rate warmup",
                               [](RunConfig& c) -> auto& { return c.train.warmup_epochs; }));
        t.push_back(double_entry("weight_decay", "decoupled weight decay",
                                 [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
        t.push_back(double_entry("beta1", "Adam first-moment decay", [](RunConfig& c) -> auto& { return c.train.beta1; }));
        t.push_back(double_entry("beta2", "Adam second-moment decay", [](RunConfig& c) -> auto& { return c.train.beta2; }));
        t.push_back(double_entry("epsilon", "Adam denominator epsilon",
                                 [](RunConfig& c) -> auto& { return c.train.epsilon; }));
        t.push_back({{"loss_mode", "training objective: sentence, word or combined"},
                     [](RunConfig& c, const std::string& v) {
                         try {
                             c.train.loss_mode = parse_loss_mode(v);
                         } catch (const std::invalid_argument&) {
                             bad_value("loss_mode", v, "sentence, word or combined");
                         }
                     },
                     [](const RunConfig& c) { return std::string(to_string(c.train.loss_mode)); }});
        t.push_back(double_entry("lambda", "weight of the sentence loss in the combined objective",
                                 [](RunConfig& c) -> auto& { return c.train.lambda; }));
        t.push_back(double_entry("grad_clip", "global gradient-norm clip, 0 disables",
                                 [](RunConfig& c) -> auto& { return c.train.grad_clip; }));
        t.push_back({{"threads", "worker threads for batch gradients and evaluation"},
                     [](RunConfig& c, const std::string& v) {
                         const auto n = parse_number<unsigned>("threads", v, "a positive integer");
                         if (n == 0) {
                             bad_value("threads", v, "a positive integer");
                         }
                         c.train.threads = n;
                     },
                     [](const RunConfig& c) { return std::to_string(c.train.threads); }});

        t.push_back(size_entry("gc_d_model", "gradient check: model width",
                               [](RunConfig& c) -> auto& { return c.grad_check.d_model; }));
        t.push_back(size_entry("gc_batch_size", "gradient check: batch size",
                               [](RunConfig& c) -> auto& { return c.grad_check.batch_size; }));
        t.push_back(size_entry("gc_n_words", "gradient check: words per narration",
                               [](RunConfig& c) -> auto& { return c.grad_check.n_words; }));
        t.push_back(size_entry("gc_grid_t", "gradient check: grid frames",
                               [](RunConfig& c) -> auto& { return c.grad_check.grid_t; }));
        t.push_back(size_entry("gc_grid_h", "gradient check: grid height",
                               [](RunConfig& c) -> auto& { return c.grad_check.grid_h; }));
        t.push_back(size_entry("gc_grid_w", "gradient check: grid width",
                               [](RunConfig& c) -> auto& { return c.grad_check.grid_w; }));
        t.push_back(double_entry("gc_step", "gradient check: central-difference step",
                                 [](RunConfig& c) -> auto& { return c.grad_check.step; }));
        t.push_back(double_entry("gc_tolerance", "gradient check: maximum relative error",
                                 [](RunConfig& c) -> auto& { return c.grad_check.tolerance; }));

        t.push_back(size_entry("ablation_epochs", "training epochs per ablation cell",
                               [](RunConfig& c) -> auto& { return c.ablation_epochs; }));
        t.push_back(string_entry("data_dir", "dataset directory used when --data is not given",
                                 [](RunConfig& c) -> auto& { return c.data_dir; }));
        t.push_back(string_entry("out_dir", "output directory used when --out is not given",
                                 [](RunConfig& c) -> auto& { return c.out_dir; }));
        t.push_back(string_entry("checkpoint_dir", "checkpoint used when --checkpoint is not given",
                                 [](RunConfig& c) -> auto& { return c.checkpoint_dir; }));
        return t;
    }();
    return table;
}

const Entry& find_entry(const std::string& key) {
    for (const auto& e : entries()) {
        if (e.key.name == key) {
            return e;
        }
    }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string env_name(const std::string& key) {
    std::string out = "COMMA_";
    for (char c : key) {
        out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& e : entries()) {
            out.push_back(e.key);
        }
        return out;
    }();
    return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    find_entry(key).set(cfg, value);
}

std::string get_setting(const RunConfig& cfg, const std::string& key) {
    return find_entry(key).get(cfg);
}

Settings parse_settings(std::istream& in, const std::string& origin) {
    Settings out;
    std::set<std::string> seen;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        const std::string where = origin + ":" + std::to_string(number);
        if (eq == std::string::npos) {
            throw std::invalid_argument(where + ": expected 'key = value'");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument(where + ": missing key");
        }
        if (!seen.insert(key).second) {
            throw std::invalid_argument(where + ": duplicate key '" + key + "'");
        }
        out.emplace_back(key, value);
    }
    return out;
}

Settings read_settings_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file " + path.string());
    }
    return parse_settings(in, path.string());
}

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) {
        return std::string(v);
    }
    return std::nullopt;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const Settings& cli, const EnvLookup& env) {
    RunConfig cfg;
    if (env) {
        for (const auto& e : entries()) {
            if (auto v = env(env_name(e.key.name))) {
                try {
                    e.set(cfg, trim(*v));
                } catch (const std::invalid_argument& err) {
                    throw std::invalid_argument(env_name(e.key.name) + ": " + err.what());
                }
            }
        }
    }
    if (file) {
        for (const auto& [k, v] : read_settings_file(*file)) {
            try {
                apply_setting(cfg, k, v);
            } catch (const std::invalid_argument& err) {
                throw std::invalid_argument(file->string() + ": " + err.what());
            }
        }
    }
    for (const auto& [k, v] : cli) {
        apply_setting(cfg, k, v);
    }
    cfg.validate();
    return cfg;
}

void write_config(std::ostream& out, const RunConfig& cfg) {
    for (const auto& e : entries()) {
        out << "# " << e.key.doc << "\n" << e.key.name << " = " << e.get(cfg) << "\n";
    }
}

}  // namespace comma
