#include "comma/commands.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace comma {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
    }
}

nlohmann::ordered_json report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["hits"] = r.hits;
    j["misses"] = r.misses;
    j["accuracy"] = r.accuracy();
    return j;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

const GroundingSample& find_sample(const Dataset& d, const std::string& id) {
    for (const auto* split : {&d.test, &d.train}) {
        for (const auto& s : *split) {
            if (s.id == id) {
                return s;
            }
        }
    }
    throw std::invalid_argument("unknown sample '" + id + "'");
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

Dataset gen_data_command(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    Dataset data = generate(cfg.synth_config());
    ensure_dir(out);
    save_dataset(out, data);
    log << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to "
        << out.string() << "\n";
    return data;
}

TrainOutcome train_command(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out,
                           std::ostream& log) {
    const Dataset data = load_dataset(data_dir);
    TrainOutcome outcome;
    outcome.model = cfg.model_config(data.config.d_video_in, data.config.d_word_in);
    const TrainConfig tc = cfg.train_config();

    double epoch_total = 0.0;
    const std::size_t steps = tc.batch_size ? data.train.size() / tc.batch_size : 0;
    auto progress = [&](const LossLogRow& row) {
        epoch_total += row.loss;
        if (row.step + 1 == steps) {
            log << "epoch " << row.epoch + 1 << "/" << tc.epochs << "  loss " << fixed(epoch_total / steps, 6)
                << "  lr " << row.lr << std::endl;
            epoch_total = 0.0;
        }
    };
    outcome.result = train(data.train, outcome.model, tc, progress);

    ensure_dir(out);
    save_checkpoint(out, outcome.model, outcome.result.params);
    write_loss_csv(out / "loss.csv", outcome.result.log);
    return outcome;
}

EvalMetrics eval_command(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data_dir) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(data_dir);
    if (data.config.d_video_in != ck.config.d_video_in || data.config.d_word_in != ck.config.d_word_in) {
        throw std::invalid_argument("checkpoint feature dimensions do not match the dataset");
    }
    EvalMetrics m;
    m.sa_variant = std::string(to_string(ck.config.sa_variant));
    m.samples = data.test.size();
    m.model = evaluate(ck.params, ck.config.sa_variant, data.test, cfg.train.threads);
    m.center_prior = center_prior(data.test);
    m.chance = chance_accuracy(data.test, 10000, cfg.seed);
    return m;
}

std::string to_json(const EvalMetrics& m) {
    nlohmann::ordered_json j;
    j["split"] = "test";
    j["samples"] = m.samples;
    j["sa_variant"] = m.sa_variant;
    j["model"] = report_json(m.model);
    j["center_prior"] = report_json(m.center_prior);
    j["chance"] = {{"accuracy", m.chance.accuracy},
                   {"ci_low", m.chance.ci_low},
                   {"ci_high", m.chance.ci_high},
                   {"draws", m.chance.draws}};
    return j.dump(2) + "\n";
}

Grounding ground_command(const fs::path& checkpoint, const fs::path& data_dir, const std::string& sample_id,
                         const fs::path& out, bool dump_masks) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(data_dir);
    const GroundingSample& s = find_sample(data, sample_id);
    const Resolution& res = s.annotation.resolution;
    Grounding g = ground(ck.params, ck.config.sa_variant, s.clip_features, s.word_features, res);

    ensure_dir(out);
    export_heatmap(out, g.heatmap);

    nlohmann::ordered_json j;
    j["sample_id"] = s.id;
    j["sentence"] = s.sentence;
    j["resolution"] = {res.t, res.h, res.w};
    j["mode_pixel"] = {{"t", g.pixel.t}, {"y", g.pixel.y}, {"x", g.pixel.x}};
    auto frames = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < res.t; ++t) {
        const PixelLocation p = mode_pixel_in_frame(g.heatmap, t);
        frames.push_back({{"frame", t}, {"y", p.y}, {"x", p.x}});
    }
    j["frames"] = frames;
    write_file(out / "pixel.json", j.dump(2) + "\n");

    if (dump_masks) {
        const ModalityLayout layout = layout_for(s.clip_features, s.word_features);
        std::ofstream ca(out / "mask_ca.txt"), sa(out / "mask_sa.txt");
        dump_mask(ca, cross_modal_mask(layout));
        dump_mask(sa, self_attention_mask(layout, ck.config.sa_variant));
    }
    return g;
}

std::vector<GradCheckRun> grad_check_command(const RunConfig& cfg, const std::vector<LossMode>& modes,
                                             bool corrupt_backward) {
    const GradCheckConfig& gc = cfg.grad_check;
    CommaConfig model = cfg.model_config(cfg.synth.d_video_in, cfg.synth.d_word_in);
    model.d_model = gc.d_model;

    std::vector<GradCheckRun> runs;
    for (LossMode mode : modes) {
        GradCheckSetup setup;
        setup.batch_size = gc.batch_size;
        setup.n_words = gc.n_words;
        setup.grid_t = gc.grid_t;
        setup.grid_h = gc.grid_h;
        setup.grid_w = gc.grid_w;
        setup.loss_mode = mode;
        setup.lambda = cfg.train.lambda;
        setup.step = gc.step;

        GradientFn analytic;
        if (corrupt_backward) {
            analytic = [&](const CommaParams& params, std::span<const SampleRef> batch) {
                Gradients g = batch_gradients(params, batch, model.sa_variant, mode, setup.lambda).grads;
                for (auto& v : g.at("sa.w_q").data()) {
                    v *= 1.01;
                }
                return g;
            };
        }
        runs.push_back({mode, grad_check(model, setup, cfg.seed, analytic)});
    }
    return runs;
}

void print_grad_check(std::ostream& out, const std::vector<GradCheckRun>& runs, double tolerance) {
    char line[160];
    for (const auto& run : runs) {
        out << "loss_mode " << to_string(run.mode) << "\n";
        std::snprintf(line, sizeof(line), "  %-22s %8s %14s  %s\n", "parameter", "size", "max_rel_error", "status");
        out << line;
        for (const auto& e : run.report.entries) {
            std::snprintf(line, sizeof(line), "  %-22s %8zu %14.3e  %s\n", e.name.c_str(), e.count,
                          e.max_rel_error, e.max_rel_error <= tolerance ? "ok" : "FAIL");
            out << line;
        }
        std::snprintf(line, sizeof(line), "  max %.3e (tolerance %.1e)\n", run.report.max_error(), tolerance);
        out << line;
    }
}

AblationTable ablation_command(const RunConfig& cfg, const fs::path& data_dir,
                               const std::vector<SelfAttentionVariant>& variants,
                               const std::vector<LossMode>& modes, std::ostream& log) {
    const Dataset data = load_dataset(data_dir);
    AblationTable table;
    table.center_prior = center_prior(data.test);
    table.chance = chance_accuracy(data.test, 10000, cfg.seed);

    for (SelfAttentionVariant v : variants) {
        for (LossMode mode : modes) {
            RunConfig cell = cfg;
            cell.model.sa_variant = v;
            cell.train.loss_mode = mode;
            cell.train.epochs = cfg.ablation_epochs;
            const CommaConfig model = cell.model_config(data.config.d_video_in, data.config.d_word_in);
            const TrainResult r = train(data.train, model, cell.train_config());

            AblationRow row;
            row.variant = v;
            row.mode = mode;
            row.epochs = cell.train.epochs;
            if (!r.epoch_loss.empty()) {
                row.first_loss = r.epoch_loss.front();
                row.final_loss = r.epoch_loss.back();
            }
            row.report = evaluate(r.params, v, data.test, cfg.train.threads);
            log << to_string(v) << " / " << to_string(mode) << ": accuracy " << fixed(row.report.accuracy(), 4)
                << std::endl;
            table.rows.push_back(row);
        }
    }
    return table;
}

void write_ablation_csv(std::ostream& out, const AblationTable& table) {
    out << "sa_variant,loss_mode,epochs,first_epoch_loss,final_epoch_loss,hits,evaluated,accuracy\n";
    char line[256];
    for (const auto& r : table.rows) {
        std::snprintf(line, sizeof(line), "%s,%s,%zu,%.17g,%.17g,%zu,%zu,%.17g\n",
                      std::string(to_string(r.variant)).c_str(), std::string(to_string(r.mode)).c_str(), r.epochs,
                      r.first_loss, r.final_loss, r.report.hits, r.report.evaluated(), r.report.accuracy());
        out << line;
    }
}

void write_ablation_markdown(std::ostream& out, const AblationTable& table) {
    out << "| SA variant | loss | epochs | first loss | final loss | accuracy |\n";
    out << "|---|---|---:|---:|---:|---:|\n";
    for (const auto& r : table.rows) {
        out << "| " << to_string(r.variant) << " | " << to_string(r.mode) << " | " << r.epochs << " | "
            << fixed(r.first_loss, 4) << " | " << fixed(r.final_loss, 4) << " | " << fixed(r.report.accuracy(), 4)
            << " |\n";
    }
    out << "\ncenter prior " << fixed(table.center_prior.accuracy(), 4) << ", chance "
        << fixed(table.chance.accuracy, 4) << " [" << fixed(table.chance.ci_low, 4) << ", "
        << fixed(table.chance.ci_high, 4) << "]\n";
}

}  // namespace comma
