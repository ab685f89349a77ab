#pragma once

#include "comma/model.hpp"
#include "comma/synth.hpp"
#include "comma/trainer.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace comma {

/// Settings for the gradient-check command.
struct GradCheckConfig {
    std::size_t d_model = 4;
    std::size_t batch_size = 2;
    std::size_t n_words = 3;
    std::size_t grid_t = 2;
    std::size_t grid_h = 2;
    std::size_t grid_w = 2;
    double step = 1e-5;
    double tolerance = 1e-4;
};

/// Everything a command can be configured with. Defaults reproduce the
/// desk-scale benchmark run.
struct RunConfig {
    /// Single seed feeding data generation, initialization and shuffling.
    std::uint64_t seed = 0;
    SynthConfig synth;
    CommaConfig model;
    TrainConfig train;
    GradCheckConfig grad_check;
    std::size_t ablation_epochs = 4;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint_dir;

    RunConfig();

    /// Copies of the module configs with the shared seed applied.
    SynthConfig synth_config() const;
    CommaConfig model_config(std::size_t d_video_in, std::size_t d_word_in) const;
    TrainConfig train_config() const;

    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string doc;
};

/// Every accepted key in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Throws std::invalid_argument naming the key on unknown keys or
/// unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& cfg, const std::string& key);

using Settings = std::vector<std::pair<std::string, std::string>>;

/// Grammar, one entry per line:
///   line    := blank | comment | entry
///   comment := '#' anything
///   entry   := key '=' value [ '#' comment ]
/// Keys and values are trimmed; duplicate keys are an error.
Settings parse_settings(std::istream& in, const std::string& origin = "config");
Settings read_settings_file(const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

/// Defaults, then COMMA_<KEY> environment variables, then the file, then
/// command-line settings. Validates the result.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const Settings& cli,
                         const EnvLookup& env = process_env);

/// All keys with their values, commented, in a form parse_settings accepts.
void write_config(std::ostream& out, const RunConfig& cfg);

}  // namespace comma
