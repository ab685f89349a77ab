#include "comma/cli.hpp"

#include "comma/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>

namespace comma {

namespace {

namespace fs = std::filesystem;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Options every subcommand accepts.
struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string sa_variant;
    std::string loss_mode;
    unsigned threads = 0;
    std::string seed;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override one config key, as key=value (repeatable)");
        app->add_option("--sa-variant", sa_variant, "spatial, temporal, spatial+temporal or spatiotemporal");
        app->add_option("--loss-mode", loss_mode, "sentence, word or combined");
        app->add_option("--threads", threads, "worker threads");
        app->add_option("--seed", seed, "seed for data, initialization and shuffling");
    }

    RunConfig resolve() const {
        Settings cli;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("--set expects key=value, got '" + s + "'");
            }
            cli.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        if (!sa_variant.empty()) cli.emplace_back("sa_variant", sa_variant);
        if (!loss_mode.empty()) cli.emplace_back("loss_mode", loss_mode);
        if (threads != 0) cli.emplace_back("threads", std::to_string(threads));
        if (!seed.empty()) cli.emplace_back("seed", seed);
        try {
            return resolve_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), cli);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
};

fs::path pick(const std::string& flag_value, const std::string& config_value, const char* flag) {
    if (!flag_value.empty()) {
        return flag_value;
    }
    if (!config_value.empty()) {
        return config_value;
    }
    throw ConfigError(std::string(flag) + " is required");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked multimodal attention for grounding narrations in video features"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "comma 1.0.0");

    std::function<int()> action;

    Common gen_opts;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic grounding benchmark");
    gen_opts.attach(gen);
    gen->add_option("--out", gen_out, "dataset directory");
    gen->callback([&] {
        action = [&] {
            const RunConfig cfg = gen_opts.resolve();
            gen_data_command(cfg, pick(gen_out, cfg.data_dir, "--out"), out);
            return 0;
        };
    });

    Common train_opts;
    std::string train_data, train_out;
    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint plus loss.csv");
    train_opts.attach(train_cmd);
    train_cmd->add_option("--data", train_data, "dataset directory");
    train_cmd->add_option("--out", train_out, "checkpoint directory");
    train_cmd->callback([&] {
        action = [&] {
            const RunConfig cfg = train_opts.resolve();
            const fs::path data = pick(train_data, cfg.data_dir, "--data");
            const fs::path dest = pick(train_out, cfg.checkpoint_dir, "--out");
            const TrainOutcome o = train_command(cfg, data, dest, err);
            out << "checkpoint written to " << dest.string() << " after " << o.result.log.size() << " steps\n";
            return 0;
        };
    });

    Common eval_opts;
    std::string eval_ckpt, eval_data, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "Pointing accuracy of a checkpoint and the baselines");
    eval_opts.attach(eval_cmd);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory");
    eval_cmd->add_option("--data", eval_data, "dataset directory");
    eval_cmd->add_option("--out", eval_out, "also write the metrics JSON to this file");
    eval_cmd->callback([&] {
        action = [&] {
            const RunConfig cfg = eval_opts.resolve();
            const EvalMetrics m = eval_command(cfg, pick(eval_ckpt, cfg.checkpoint_dir, "--checkpoint"),
                                               pick(eval_data, cfg.data_dir, "--data"));
            const std::string json = to_json(m);
            out << json;
            if (!eval_out.empty()) write_text(eval_out, json);
            return 0;
        };
    });

    Common ground_opts;
    std::string ground_ckpt, ground_data, ground_out, sample;
    bool dump = false;
    auto* ground_cmd = app.add_subcommand("ground", "Heatmap and mode pixel for one sample");
    ground_opts.attach(ground_cmd);
    ground_cmd->add_option("--checkpoint", ground_ckpt, "checkpoint directory");
    ground_cmd->add_option("--data", ground_data, "dataset directory");
    ground_cmd->add_option("--sample", sample, "sample id")->required();
    ground_cmd->add_option("--out", ground_out, "output directory");
    ground_cmd->add_flag("--dump-mask", dump, "also write the attention masks as 0/1 grids");
    ground_cmd->callback([&] {
        action = [&] {
            const RunConfig cfg = ground_opts.resolve();
            const fs::path dest = pick(ground_out, cfg.out_dir, "--out");
            const Grounding g = ground_command(pick(ground_ckpt, cfg.checkpoint_dir, "--checkpoint"),
                                               pick(ground_data, cfg.data_dir, "--data"), sample, dest, dump);
            out << "mode pixel t=" << g.pixel.t << " y=" << g.pixel.y << " x=" << g.pixel.x << "\n";
            return 0;
        };
    });

    Common gc_opts;
    bool corrupt = false;
    auto* gc_cmd = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
    gc_opts.attach(gc_cmd);
    gc_cmd->add_flag("--corrupt-backward", corrupt, "perturb the analytic sa.w_q gradient");
    gc_cmd->callback([&] {
        action = [&] {
            const RunConfig cfg = gc_opts.resolve();
            std::vector<LossMode> modes{LossMode::Sentence, LossMode::Word, LossMode::Combined};
            if (!gc_opts.loss_mode.empty()) modes = {cfg.train.loss_mode};
            const auto runs = grad_check_command(cfg, modes, corrupt);
            print_grad_check(out, runs, cfg.grad_check.tolerance);
            const bool ok = std::all_of(runs.begin(), runs.end(),
                                        [&](const GradCheckRun& r) { return r.report.passed(cfg.grad_check.tolerance); });
            out << (ok ? "gradient check passed\n" : "gradient check FAILED\n");
            return ok ? 0 : 1;
        };
    });

    Common ab_opts;
    std::string ab_data, ab_out;
    auto* ab_cmd = app.add_subcommand("ablate", "Sweep self-attention variants and loss modes");
    ab_opts.attach(ab_cmd);
    ab_cmd->add_option("--data", ab_data, "dataset directory");
    ab_cmd->add_option("--out", ab_out, "directory for ablation.csv and ablation.md");
    ab_cmd->callback([&] {
        action = [&] {
            const RunConfig cfg = ab_opts.resolve();
            std::vector<SelfAttentionVariant> variants(std::begin(kAllSelfAttentionVariants),
                                                       std::end(kAllSelfAttentionVariants));
            std::vector<LossMode> modes{LossMode::Sentence, LossMode::Word, LossMode::Combined};
            if (!ab_opts.sa_variant.empty()) variants = {cfg.model.sa_variant};
            if (!ab_opts.loss_mode.empty()) modes = {cfg.train.loss_mode};
            const AblationTable table =
                ablation_command(cfg, pick(ab_data, cfg.data_dir, "--data"), variants, modes, err);
            write_ablation_markdown(out, table);
            if (!ab_out.empty()) {
                fs::create_directories(ab_out);
                std::ofstream csv(fs::path(ab_out) / "ablation.csv", std::ios::binary);
                write_ablation_csv(csv, table);
                std::ofstream md(fs::path(ab_out) / "ablation.md", std::ios::binary);
                write_ablation_markdown(md, table);
            }
            return 0;
        };
    });

    Common show_opts;
    auto* show = app.add_subcommand("show-config", "Print every config key with its resolved value");
    show_opts.attach(show);
    show->callback([&] {
        action = [&] {
            write_config(out, show_opts.resolve());
            return 0;
        };
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        return action();
    } catch (const ConfigError& e) {
        err << "comma: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "comma: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace comma
