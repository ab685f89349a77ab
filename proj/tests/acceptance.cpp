// Acceptance suite: one PASS/FAIL line per criterion, exit status = number
// of failed criteria. Usage: comma_acceptance [work_dir]

#include "comma/cli.hpp"
#include "comma/commands.hpp"
#include "comma/inference.hpp"
#include "comma/losses.hpp"
#include "comma/model.hpp"

#include "support/loss_oracles.hpp"
#include "support/oracles.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

using namespace comma;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
    std::ostringstream o, e;
    const int code = run_cli(args, o, e);
    if (out) *out = o.str();
    if (code != 0) std::cerr << e.str();
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return files;
}

ModalityLayout random_layout(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> words(1, 4), extent(1, 3);
    return {words(rng), extent(rng), extent(rng), extent(rng)};
}

Outcome gradient_correctness() {
    const auto start = Clock::now();
    const RunConfig cfg;
    const auto& gc = cfg.grad_check;
    const auto runs = grad_check_command(cfg, {LossMode::Sentence, LossMode::Word, LossMode::Combined});
    const double secs = seconds_since(start);
    double worst = 0.0;
    std::size_t entries = 0;
    for (const auto& r : runs) {
        worst = std::max(worst, r.report.max_error());
        entries += r.report.entries.size();
    }
    const bool shape = gc.d_model == 4 && gc.batch_size == 2 && gc.n_words == 3 && gc.grid_t == 2 &&
                       gc.grid_h == 2 && gc.grid_w == 2;
    return {shape && entries == 3 * 13 && worst <= 1e-4 && secs < 60.0,
            fmt("D=4 n=2 N_L=3 grid 2x2x2, 3 modes x 13 parameters, max rel err %.2e (limit 1e-4), %.2f s", worst,
                secs)};
}

Outcome no_mixing() {
    std::mt19937_64 rng(1001);
    std::size_t failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const ModalityLayout layout = random_layout(rng);
        const std::size_t d = 2 + trial % 5, n = layout.total(), nw = layout.n_words;
        const AttentionMask mask = cross_modal_mask(layout);
        const Tensor k = oracle::random_tensor({d, n}, rng), q = oracle::random_tensor({d, n}, rng);
        const Tensor v = oracle::random_tensor({d, n}, rng);
        const AttentionOutput base = attention(k, q, v, mask);

        // Replace the values of one modality; that modality's outputs must not move.
        for (bool words : {true, false}) {
            Tensor v2 = v;
            const Tensor noise = oracle::random_tensor({d, n}, rng, 10.0);
            for (std::size_t r = 0; r < d; ++r)
                for (std::size_t c = 0; c < n; ++c)
                    if ((c < nw) == words) v2(r, c) = noise(r, c);
            const AttentionOutput moved = attention(k, q, v2, mask);
            for (std::size_t r = 0; r < d; ++r)
                for (std::size_t c = 0; c < n; ++c)
                    if ((c < nw) == words && moved.context(r, c) != base.context(r, c)) ++failures;
        }
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                if ((a < nw) == (b < nw) && base.weights(a, b) != 0.0) ++failures;
    }
    return {failures == 0, fmt("100 random layouts, %zu bit-level violations", failures)};
}

Outcome block_parity() {
    std::mt19937_64 rng(1002);
    double block = 0.0, min_mass = INFINITY;
    for (int trial = 0; trial < 100; ++trial) {
        const ModalityLayout layout = random_layout(rng);
        const auto variant = kAllSelfAttentionVariants[trial % 4];
        const AttentionMask ca = cross_modal_mask(layout), sa = self_attention_mask(layout, variant);
        auto on = [](const AttentionMask& m) { return [&m](std::size_t a, std::size_t b) { return m.allowed(a, b); }; };
        const std::size_t n = layout.total();
        const std::array<Tensor, 3> layers{oracle::random_stochastic(n, on(ca), rng),
                                           oracle::random_stochastic(n, on(sa), rng),
                                           oracle::random_stochastic(n, on(ca), rng)};
        const Tensor plain = matmul(matmul(layers[2], layers[1]), layers[0]);
        const Tensor rolled = attention_rollout(layers, layout);
        double mass = 0.0;
        for (std::size_t w = 0; w < layout.n_words; ++w)
            for (std::size_t r = layout.n_words; r < n; ++r) {
                block = std::max(block, std::abs(plain(w, r)));
                mass += rolled(w, r);
            }
        min_mass = std::min(min_mass, mass);
    }
    return {block <= 1e-15 && min_mass > 0.0,
            fmt("100 instances, plain word->region max %.1e (limit 1e-15), min rollout mass %.3f", block, min_mass)};
}

BatchRepresentations constant_batch(std::size_t n) {
    BatchRepresentations b;
    b.n = n;
    const Tensor unit({2, 1}, std::vector<double>{0.6, 0.8});
    b.pos_c.assign(n, unit);
    b.pos_s.assign(n, unit);
    b.cross_c.assign(n, std::vector<Tensor>(n, unit));
    b.cross_s.assign(n, std::vector<Tensor>(n, unit));
    b.word_ctx.assign(n, std::vector<Tensor>(n, Tensor({2, 3}, 0.5)));
    b.word_val.assign(n, Tensor({2, 3}, 0.5));
    return b;
}

Outcome loss_oracles() {
    std::mt19937_64 rng(1003);
    std::uniform_int_distribution<std::size_t> size(1, 4), words(1, 4);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = size(rng);
        std::vector<std::size_t> counts(n);
        for (auto& c : counts) c = words(rng);
        const BatchRepresentations b = oracle::random_batch(n, 4, counts, rng);
        worst = std::max(worst, std::abs(sentence_loss(b) - oracle::sentence_oracle(b)));
        worst = std::max(worst, std::abs(word_loss(b, oracle::layouts_for(counts)) - oracle::word_oracle(b)));
    }
    const auto one = oracle::layouts_for({3});
    const bool zero = sentence_loss(constant_batch(1)) == 0.0 && word_loss(constant_batch(1), one) == 0.0;
    const double sym = std::abs(sentence_loss(constant_batch(2)) - 2.0 * std::log(3.0));
    return {worst <= 1e-10 && zero && sym <= 1e-12,
            fmt("100 batches max |loss - oracle| %.1e (limit 1e-10), n=1 %s, n=2 |L - 2 ln 3| %.1e", worst,
                zero ? "exactly 0" : "nonzero", sym)};
}

Outcome stochasticity() {
    std::mt19937_64 rng(1004);
    double worst = 0.0;
    std::size_t nonzero_masked = 0, matrices = 0;
    auto inspect = [&](const Tensor& w, const AttentionMask& mask) {
        ++matrices;
        for (std::size_t q = 0; q < w.rows(); ++q) {
            double s = 0.0;
            for (std::size_t k = 0; k < w.cols(); ++k) {
                if (mask.allowed(q, k)) s += w(q, k);
                else if (w(q, k) != 0.0) ++nonzero_masked;
            }
            worst = std::max(worst, std::abs(s - 1.0));
        }
    };
    for (int trial = 0; trial < 100; ++trial) {
        const auto v = kAllSelfAttentionVariants[trial % 4];
        CommaConfig cfg;
        cfg.d_video_in = 5;
        cfg.d_word_in = 6;
        cfg.d_model = 4 + trial % 3;
        cfg.sa_variant = v;
        cfg.seed = trial;
        const CommaParams p = init_params(cfg);
        const ModalityLayout shape = random_layout(rng);
        const double scale = 1.0 + trial % 4;
        const Tensor clip = oracle::random_tensor({5, shape.t, shape.h, shape.w}, rng, scale);
        const Tensor words = oracle::random_tensor({6, shape.n_words}, rng, scale);
        const ModalityLayout layout = layout_for(clip, words);
        const AttentionMask masks[3] = {cross_modal_mask(layout), self_attention_mask(layout, v),
                                        cross_modal_mask(layout)};

        const Embedded e = embed(clip, words, p);
        const CommaOutput out = forward(e.clip, e.words, layout, p, v);
        Tape tape;
        const ParamVars pv = bind_params(tape, p);
        const EmbeddedVars ev = embed(tape, pv, tape.input(flatten_clip(clip)), tape.input(words));
        const CommaVars taped = forward(tape, pv, ev.clip, ev.words, layout, v);
        for (int l = 0; l < 3; ++l) {
            inspect(out.layer_weights[l], masks[l]);
            inspect(tape.value(taped.layer_weights[l]), masks[l]);
        }
    }
    return {worst <= 1e-12 && nonzero_masked == 0,
            fmt("%zu weight matrices, max |row sum - 1| %.1e (limit 1e-12), %zu nonzero masked entries", matrices,
                worst, nonzero_masked)};
}

Tensor permute_columns(const Tensor& m, const std::vector<std::size_t>& perm) {
    Tensor out(m.shape());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, perm[c]);
    return out;
}

Outcome permutation_properties() {
    std::mt19937_64 rng(1005);
    double word_perm = 0.0, region_perm = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto v = kAllSelfAttentionVariants[trial % 4];
        CommaConfig cfg;
        cfg.d_video_in = 5;
        cfg.d_word_in = 6;
        cfg.d_model = 4;
        cfg.sa_variant = v;
        cfg.seed = trial;
        const CommaParams p = init_params(cfg);
        const Tensor clip = oracle::random_tensor({5, 2, 2, 2}, rng);
        const Tensor words = oracle::random_tensor({6, 4}, rng);
        const ModalityLayout layout = layout_for(clip, words);
        const Embedded e = embed(clip, words, p);
        const Pooled base = pool(forward(e.clip, e.words, layout, p, v), layout);

        std::vector<std::size_t> wp(4);
        std::iota(wp.begin(), wp.end(), 0);
        std::shuffle(wp.begin(), wp.end(), rng);
        const Embedded ew = embed(clip, permute_columns(words, wp), p);
        word_perm = std::max(word_perm, max_abs_diff(pool(forward(ew.clip, ew.words, layout, p, v), layout).s_hat,
                                                     base.s_hat));

        if (v == SelfAttentionVariant::Spatiotemporal) {
            std::vector<std::size_t> rp(8);
            std::iota(rp.begin(), rp.end(), 0);
            std::shuffle(rp.begin(), rp.end(), rng);
            const Pooled moved = pool(forward(permute_columns(e.clip, rp), e.words, layout, p, v), layout);
            region_perm = std::max(region_perm, max_abs_diff(moved.c_hat, base.c_hat));
        }
    }
    return {word_perm <= 1e-12 && region_perm <= 1e-12,
            fmt("S-hat under word permutation %.1e, C-hat under region permutation (spatiotemporal) %.1e "
                "(limit 1e-12)",
                word_perm, region_perm)};
}

struct BenchmarkRun {
    bool ok = false;
    double seconds = 0.0;
    double ablation_seconds = 0.0;
    nlohmann::json metrics;
    std::size_t ablation_rows = 0;
    bool ablation_finite = false;
};

/// Criteria 7 and 8 through the command line, writing everything under `dir`.
BenchmarkRun benchmark(const fs::path& dir, bool show_table) {
    BenchmarkRun run;
    fs::remove_all(dir);
    const std::string data = (dir / "data").string(), model = (dir / "model").string();
    const auto start = Clock::now();
    if (cli({"gen-data", "--out", data}) != 0) return run;
    if (cli({"train", "--data", data, "--out", model}) != 0) return run;
    if (cli({"eval", "--checkpoint", model, "--data", data, "--out", (dir / "metrics.json").string()}) != 0)
        return run;
    run.seconds = seconds_since(start);
    run.metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));

    const Dataset d = load_dataset(data);
    for (std::size_t i : {std::size_t{0}, d.test.size() / 2}) {
        const std::string id = d.test[i].id;
        if (cli({"ground", "--checkpoint", model, "--data", data, "--sample", id, "--out",
                 (dir / "ground" / id).string(), "--dump-mask"}) != 0)
            return run;
    }

    const auto ablation_start = Clock::now();
    std::string table;
    if (cli({"ablate", "--data", data, "--out", (dir / "ablation").string()}, &table) != 0) return run;
    run.ablation_seconds = seconds_since(ablation_start);
    if (show_table) std::cout << table;
    std::ifstream csv(dir / "ablation" / "ablation.csv");
    std::string line;
    std::getline(csv, line);
    run.ablation_finite = true;
    while (std::getline(csv, line)) {
        ++run.ablation_rows;
        std::stringstream fields(line);
        std::string cell;
        for (int col = 0; std::getline(fields, cell, ','); ++col)
            if (col >= 3 && !std::isfinite(std::stod(cell))) run.ablation_finite = false;
    }
    run.ok = true;
    return run;
}

Outcome end_to_end(const BenchmarkRun& run) {
    if (!run.ok) return {false, "benchmark commands failed"};
    const double model = run.metrics["model"]["accuracy"].get<double>();
    const double center = run.metrics["center_prior"]["accuracy"].get<double>();
    const double chance = run.metrics["chance"]["accuracy"].get<double>();
    const double ci_high = run.metrics["chance"]["ci_high"].get<double>();
    return {model >= 0.80 && center <= 0.30 && chance <= 0.30 && run.seconds < 900.0,
            fmt("held-out accuracy %.4f (>= 0.80), center prior %.4f, chance %.4f [CI high %.4f] (<= 0.30), "
                "%.1f s (< 900 s)",
                model, center, chance, ci_high, run.seconds)};
}

Outcome ablation(const BenchmarkRun& run) {
    if (!run.ok) return {false, "ablation command failed"};
    return {run.ablation_rows == 12 && run.ablation_finite,
            fmt("4 SA variants x 3 loss modes: %zu rows, all values finite: %s, %.1f s", run.ablation_rows,
                run.ablation_finite ? "yes" : "no", run.ablation_seconds)};
}

Outcome determinism(const fs::path& a, const fs::path& b, const BenchmarkRun& second) {
    if (!second.ok) return {false, "repeat run failed"};
    std::size_t compared = 0, differing = 0;
    for (const char* sub : {"data", "model", "ground", "ablation"}) {
        const auto ta = tree(a / sub), tb = tree(b / sub);
        if (ta.size() != tb.size()) ++differing;
        for (const auto& [name, bytes] : ta) {
            ++compared;
            auto it = tb.find(name);
            if (it == tb.end() || it->second != bytes) ++differing;
        }
    }
    ++compared;
    if (slurp(a / "metrics.json") != slurp(b / "metrics.json")) ++differing;
    return {differing == 0 && compared > 1,
            fmt("%zu files compared across two seeded runs (dataset, checkpoint, loss log, metrics, heatmaps, "
                "ablation), %zu differ",
                compared, differing)};
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "comma_acceptance";
    std::vector<std::pair<std::string, Outcome>> results;
    auto record = [&](std::string name, Outcome o) {
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
        results.emplace_back(std::move(name), std::move(o));
    };
    auto guarded = [](const std::function<Outcome()>& f) -> Outcome {
        try {
            return f();
        } catch (const std::exception& e) {
            return {false, std::string("exception: ") + e.what()};
        }
    };

    record("1 gradient correctness", guarded(gradient_correctness));
    record("2 no modality mixing", guarded(no_mixing));
    record("3 block parity", guarded(block_parity));
    record("4 loss oracles", guarded(loss_oracles));
    record("5 softmax stochasticity", guarded(stochasticity));
    record("6 permutation properties", guarded(permutation_properties));

    BenchmarkRun first, second;
    try {
        first = benchmark(work / "run1", true);
    } catch (const std::exception& e) {
        std::cerr << "benchmark: " << e.what() << "\n";
    }
    record("7 end-to-end learning", guarded([&] { return end_to_end(first); }));
    record("8 ablation harness", guarded([&] { return ablation(first); }));
    try {
        second = benchmark(work / "run2", false);
    } catch (const std::exception& e) {
        std::cerr << "benchmark: " << e.what() << "\n";
    }
    record("9 determinism", guarded([&] { return determinism(work / "run1", work / "run2", second); }));

    const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second.pass; });
    std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
    return static_cast<int>(failed);
}
