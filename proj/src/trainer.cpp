#include "comma/trainer.hpp"

#include "comma/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace comma {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning_rate must be a non-negative finite number");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("batch_size must be at least 1");
    }
    if (!(weight_decay >= 0.0) || !(epsilon > 0.0)) {
        throw std::invalid_argument("weight_decay must be >= 0 and epsilon > 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("lambda must be non-negative");
    }
    if (!(grad_clip >= 0.0)) {
        throw std::invalid_argument("grad_clip must be non-negative");
    }
}

double warmup_lr(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
    if (steps_per_epoch == 0) {
        throw std::invalid_argument("warmup_lr: steps_per_epoch must be positive");
    }
    const std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    if (warmup_steps == 0) {
        return cfg.learning_rate;
    }
    const double ramp = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    return cfg.learning_rate * std::min(1.0, ramp);
}

void adamw_step(const ParamRefs& params, const Gradients& grads, OptimizerState& state, double rate,
                const TrainConfig& cfg) {
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) {
            throw std::invalid_argument("adamw_step: missing gradient for " + name);
        }
        if (it->second.shape() != p->shape()) {
            throw std::invalid_argument("adamw_step: gradient shape mismatch for " + name);
        }
        if (!it->second.all_finite()) {
            throw NonFiniteError("adamw_step: non-finite gradient for " + name);
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        auto [m_it, m_new] = state.first_moment.try_emplace(name, p->shape(), 0.0);
        auto [v_it, v_new] = state.second_moment.try_emplace(name, p->shape(), 0.0);
        auto theta = p->data();
        auto m = m_it->second.data();
        auto v = v_it->second.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            theta[i] -= rate * cfg.weight_decay * theta[i];
            theta[i] -= rate * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + cfg.epsilon);
        }
    }
}

std::vector<SampleRef> refs_of(std::span<const GroundingSample> samples) {
    std::vector<SampleRef> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back({&s.clip_features, &s.word_features});
    }
    return out;
}

namespace {

// The batch is split across tapes: one per sample for the embeddings, one
// per (clip, narration) pair for the attention stack, and one for the loss.
// Backward runs the same chain in reverse, handing adjoints of each tape's
// inputs to the tape that produced them.
struct BatchGraph {
    struct EmbedState {
        Tape tape;
        Var clip;
        Var words;
        Var values;
    };
    struct PairState {
        Tape tape;
        Var clip_in;
        Var words_in;
        CommaVars out;
        PooledVars pooled;
    };

    std::size_t n = 0;
    std::vector<EmbedState> embeds;
    std::vector<PairState> pairs;  // index i * n + j: clip i, narration j
    Tape loss_tape;
    BatchVars vars;
    Var loss;
};

ParamVars bind_embedding(Tape& tape, const CommaParams& p) {
    ParamVars v;
    v.video_w = tape.parameter("video_proj.weight", p.video_proj.weight);
    v.video_b = tape.parameter("video_proj.bias", p.video_proj.bias);
    v.word_w1 = tape.parameter("word_proj.fc1.weight", p.word_proj.fc1.weight);
    v.word_b1 = tape.parameter("word_proj.fc1.bias", p.word_proj.fc1.bias);
    v.word_w2 = tape.parameter("word_proj.fc2.weight", p.word_proj.fc2.weight);
    v.word_b2 = tape.parameter("word_proj.fc2.bias", p.word_proj.fc2.bias);
    v.value_w1 = tape.parameter("word_value.fc1.weight", p.word_value.fc1.weight);
    v.value_b1 = tape.parameter("word_value.fc1.bias", p.word_value.fc1.bias);
    v.value_w2 = tape.parameter("word_value.fc2.weight", p.word_value.fc2.weight);
    v.value_b2 = tape.parameter("word_value.fc2.bias", p.word_value.fc2.bias);
    return v;
}

ParamVars bind_self_attention(Tape& tape, const CommaParams& p) {
    ParamVars v;
    v.sa_w_k = tape.parameter("sa.w_k", p.sa_w_k);
    v.sa_w_q = tape.parameter("sa.w_q", p.sa_w_q);
    v.sa_w_v = tape.parameter("sa.w_v", p.sa_w_v);
    return v;
}

void build_forward(BatchGraph& g, const CommaParams& params, std::span<const SampleRef> batch,
                   SelfAttentionVariant variant, LossMode mode, double lambda, unsigned threads) {
    const std::size_t n = batch.size();
    if (n == 0) {
        throw std::invalid_argument("batch must contain at least one sample");
    }
    g.n = n;
    g.embeds.resize(n);
    g.pairs.resize(n * n);

    std::vector<ModalityLayout> layouts;
    for (const auto& s : batch) {
        layouts.push_back(layout_for(*s.clip_features, *s.word_features));
    }

    parallel_for(n, threads, [&](std::size_t i) {
        auto& e = g.embeds[i];
        const auto p = bind_embedding(e.tape, params);
        const auto emb = embed(e.tape, p, e.tape.input(flatten_clip(*batch[i].clip_features)),
                               e.tape.input(*batch[i].word_features));
        e.clip = emb.clip;
        e.words = emb.words;
        e.values = word_values(e.tape, p, emb.words);
    });

    parallel_for(n * n, threads, [&](std::size_t k) {
        const std::size_t i = k / n, j = k % n;
        auto& pr = g.pairs[k];
        const auto p = bind_self_attention(pr.tape, params);
        pr.clip_in = pr.tape.input(g.embeds[i].tape.value(g.embeds[i].clip));
        pr.words_in = pr.tape.input(g.embeds[j].tape.value(g.embeds[j].words));
        const ModalityLayout layout(layouts[j].n_words, layouts[i].t, layouts[i].h, layouts[i].w);
        pr.out = forward(pr.tape, p, pr.clip_in, pr.words_in, layout, variant);
        pr.pooled = pool(pr.tape, pr.out);
    });

    BatchRepresentations reps;
    reps.n = n;
    reps.cross_c.assign(n, std::vector<Tensor>(n));
    reps.cross_s.assign(n, std::vector<Tensor>(n));
    reps.word_ctx.assign(n, std::vector<Tensor>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& diag = g.pairs[i * n + i];
        reps.pos_c.push_back(diag.tape.value(diag.pooled.c_hat));
        reps.pos_s.push_back(diag.tape.value(diag.pooled.s_hat));
        reps.word_val.push_back(g.embeds[i].tape.value(g.embeds[i].values));
        for (std::size_t j = 0; j < n; ++j) {
            const auto& pr = g.pairs[i * n + j];
            reps.cross_c[i][j] = pr.tape.value(pr.pooled.c_hat);
            reps.cross_s[i][j] = pr.tape.value(pr.pooled.s_hat);
            reps.word_ctx[i][j] = pr.tape.value(pr.out.s_ca2);
        }
    }
    g.vars = bind_batch(g.loss_tape, reps);
    g.loss = batch_loss(g.loss_tape, g.vars, mode, lambda);
}

double loss_of(const BatchGraph& g) {
    const double loss = g.loss_tape.value(g.loss)[0];
    if (!std::isfinite(loss)) {
        throw NonFiniteError("non-finite batch loss");
    }
    return loss;
}

}  // namespace

BatchGradients batch_gradients(const CommaParams& params, std::span<const SampleRef> batch,
                               SelfAttentionVariant variant, LossMode mode, double lambda, unsigned threads) {
    BatchGraph g;
    build_forward(g, params, batch, variant, mode, lambda, threads);
    BatchGradients result;
    result.loss = loss_of(g);
    const std::size_t n = g.n;

    g.loss_tape.backward(g.loss);

    parallel_for(n * n, threads, [&](std::size_t k) {
        const std::size_t i = k / n, j = k % n;
        auto& pr = g.pairs[k];
        const Var c_src = i == j ? g.vars.pos_c[i] : g.vars.cross_c[i][j];
        const Var s_src = i == j ? g.vars.pos_s[i] : g.vars.cross_s[i][j];
        const std::pair<Var, Tensor> seeds[] = {
            {pr.pooled.c_hat, g.loss_tape.adjoint(c_src)},
            {pr.pooled.s_hat, g.loss_tape.adjoint(s_src)},
            {pr.out.s_ca2, g.loss_tape.adjoint(g.vars.word_ctx[i][j])},
        };
        pr.tape.backward(seeds);
    });

    parallel_for(n, threads, [&](std::size_t i) {
        auto& e = g.embeds[i];
        Tensor d_clip(e.tape.value(e.clip).shape(), 0.0);
        Tensor d_words(e.tape.value(e.words).shape(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& as_clip = g.pairs[i * n + j];
            d_clip = add(d_clip, as_clip.tape.adjoint(as_clip.clip_in));
            const auto& as_words = g.pairs[j * n + i];
            d_words = add(d_words, as_words.tape.adjoint(as_words.words_in));
        }
        const std::pair<Var, Tensor> seeds[] = {
            {e.clip, std::move(d_clip)},
            {e.words, std::move(d_words)},
            {e.values, g.loss_tape.adjoint(g.vars.word_val[i])},
        };
        e.tape.backward(seeds);
    });

    // Fixed reduction order keeps results independent of the thread count.
    for (const auto& e : g.embeds) {
        for (const auto& [name, grad] : e.tape.gradients()) {
            accumulate(result.grads, name, grad);
        }
    }
    for (const auto& pr : g.pairs) {
        for (const auto& [name, grad] : pr.tape.gradients()) {
            accumulate(result.grads, name, grad);
        }
    }
    return result;
}

double batch_loss_value(const CommaParams& params, std::span<const SampleRef> batch, SelfAttentionVariant variant,
                        LossMode mode, double lambda) {
    BatchGraph g;
    build_forward(g, params, batch, variant, mode, lambda, 1);
    return loss_of(g);
}

namespace {

void clip_gradients(Gradients& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (auto v : g.data()) {
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) {
        return;
    }
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
        for (auto& v : g.data()) {
            v *= s;
        }
    }
}

}  // namespace

TrainResult train(std::span<const GroundingSample> dataset, const CommaConfig& model_cfg,
                  const TrainConfig& train_cfg, const ProgressFn& progress) {
    return train_from(init_params(model_cfg), dataset, model_cfg, train_cfg, progress);
}

TrainResult train_from(CommaParams params, std::span<const GroundingSample> dataset, const CommaConfig& model_cfg,
                       const TrainConfig& train_cfg, const ProgressFn& progress) {
    model_cfg.validate();
    train_cfg.validate();
    if (dataset.empty()) {
        throw std::invalid_argument("train: dataset is empty");
    }
    if (dataset.size() < train_cfg.batch_size) {
        throw std::invalid_argument("train: dataset smaller than one batch");
    }

    TrainResult result;
    result.params = std::move(params);
    result.steps_per_epoch = dataset.size() / train_cfg.batch_size;
    const auto all = refs_of(dataset);
    std::vector<std::size_t> order(dataset.size());
    std::mt19937_64 rng(train_cfg.seed ^ 0x9E3779B97F4A7C15ull);
    OptimizerState state;
    const auto refs = result.params.named();

    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        for (std::size_t step = 0; step < result.steps_per_epoch; ++step, ++global_step) {
            std::vector<SampleRef> batch;
            for (std::size_t b = 0; b < train_cfg.batch_size; ++b) {
                batch.push_back(all[order[step * train_cfg.batch_size + b]]);
            }
            BatchGradients bg;
            try {
                bg = batch_gradients(result.params, batch, model_cfg.sa_variant, train_cfg.loss_mode,
                                     train_cfg.lambda, train_cfg.threads);
            } catch (const NonFiniteError& e) {
                std::ostringstream os;
                os << "training diverged at epoch " << epoch << ", step " << step << ": " << e.what();
                throw std::runtime_error(os.str());
            }
            if (train_cfg.grad_clip > 0.0) {
                clip_gradients(bg.grads, train_cfg.grad_clip);
            }
            const double rate = warmup_lr(global_step, result.steps_per_epoch, train_cfg);
            adamw_step(refs, bg.grads, state, rate, train_cfg);

            LossLogRow row{epoch, step, bg.loss, rate};
            result.log.push_back(row);
            epoch_total += bg.loss;
            if (progress) {
                progress(row);
            }
        }
        result.epoch_loss.push_back(epoch_total / static_cast<double>(result.steps_per_epoch));
    }
    return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossLogRow>& log) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "epoch,step,loss,lr\n";
    char line[128];
    for (const auto& r : log) {
        std::snprintf(line, sizeof(line), "%zu,%zu,%.17g,%.17g\n", r.epoch, r.step, r.loss, r.lr);
        out << line;
    }
}

double GradCheckReport::max_error() const {
    double m = 0.0;
    for (const auto& e : entries) {
        m = std::max(m, e.max_rel_error);
    }
    return m;
}

GradCheckReport finite_difference_check(const ParamRefs& params, const std::function<double()>& loss,
                                        const Gradients& analytic, double step) {
    GradCheckReport report;
    for (const auto& [name, p] : params) {
        auto it = analytic.find(name);
        const Tensor zero(p->shape(), 0.0);
        const Tensor& a = it == analytic.end() ? zero : it->second;
        if (a.shape() != p->shape()) {
            throw std::invalid_argument("finite_difference_check: gradient shape mismatch for " + name);
        }
        Tensor numeric(p->shape(), 0.0);
        auto theta = p->data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + step;
            const double up = loss();
            theta[i] = saved - step;
            const double down = loss();
            theta[i] = saved;
            numeric[i] = (up - down) / (2.0 * step);
        }
        const double scale_ref = std::max(max_abs(a), max_abs(numeric));
        const double diff = max_abs_diff(a, numeric);
        report.entries.push_back({name, p->size(), scale_ref > 0.0 ? diff / scale_ref : 0.0});
    }
    return report;
}

GradCheckReport grad_check(const CommaConfig& model_cfg, const GradCheckSetup& setup, std::uint64_t seed,
                           const GradientFn& analytic_override) {
    model_cfg.validate();
    CommaConfig cfg = model_cfg;
    cfg.seed = seed;
    CommaParams params = init_params(cfg);

    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Tensor> clips, words;
    for (std::size_t i = 0; i < setup.batch_size; ++i) {
        Tensor c({cfg.d_video_in, setup.grid_t, setup.grid_h, setup.grid_w});
        Tensor w({cfg.d_word_in, setup.n_words});
        for (auto& v : c.data()) v = gauss(rng);
        for (auto& v : w.data()) v = gauss(rng);
        clips.push_back(std::move(c));
        words.push_back(std::move(w));
    }
    std::vector<SampleRef> batch;
    for (std::size_t i = 0; i < setup.batch_size; ++i) {
        batch.push_back({&clips[i], &words[i]});
    }

    const Gradients analytic =
        analytic_override ? analytic_override(params, batch)
                          : batch_gradients(params, batch, cfg.sa_variant, setup.loss_mode, setup.lambda).grads;
    auto loss = [&] { return batch_loss_value(params, batch, cfg.sa_variant, setup.loss_mode, setup.lambda); };
    return finite_difference_check(params.named(), loss, analytic, setup.step);
}

}  // namespace comma
