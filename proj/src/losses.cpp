#include "comma/losses.hpp"

#include <stdexcept>
#include <string>

namespace comma {

void BatchRepresentations::validate() const {
    if (n == 0) {
        throw std::invalid_argument("batch must contain at least one sample");
    }
    auto square = [&](const std::vector<std::vector<Tensor>>& m, const char* what) {
        if (m.size() != n) {
            throw std::invalid_argument(std::string(what) + " must be n × n");
        }
        for (const auto& row : m) {
            if (row.size() != n) {
                throw std::invalid_argument(std::string(what) + " must be n × n");
            }
        }
    };
    if (pos_c.size() != n || pos_s.size() != n || word_val.size() != n) {
        throw std::invalid_argument("batch vectors must have n entries");
    }
    square(cross_c, "cross_c");
    square(cross_s, "cross_s");
    square(word_ctx, "word_ctx");
    const auto d = pos_c[0].shape();
    for (std::size_t i = 0; i < n; ++i) {
        if (pos_c[i].shape() != d || pos_s[i].shape() != d) {
            throw std::invalid_argument("pooled vectors must share dimension D");
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j && (cross_c[i][j].shape() != d || cross_s[i][j].shape() != d)) {
                throw std::invalid_argument("cross pooled vectors must share dimension D");
            }
        }
    }
}

std::string_view to_string(LossMode mode) {
    switch (mode) {
    case LossMode::Sentence: return "sentence";
    case LossMode::Word: return "word";
    case LossMode::Combined: return "combined";
    }
    return "unknown";
}

LossMode parse_loss_mode(std::string_view name) {
    for (auto m : {LossMode::Sentence, LossMode::Word, LossMode::Combined}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown loss mode: " + std::string(name));
}

BatchVars bind_batch(Tape& tape, const BatchRepresentations& batch) {
    batch.validate();
    const std::size_t n = batch.n;
    BatchVars v;
    v.n = n;
    v.cross_c.assign(n, std::vector<Var>(n));
    v.cross_s.assign(n, std::vector<Var>(n));
    v.word_ctx.assign(n, std::vector<Var>(n));
    for (std::size_t i = 0; i < n; ++i) {
        v.pos_c.push_back(tape.input(batch.pos_c[i]));
        v.pos_s.push_back(tape.input(batch.pos_s[i]));
        v.word_val.push_back(tape.input(batch.word_val[i]));
        for (std::size_t j = 0; j < n; ++j) {
            v.word_ctx[i][j] = tape.input(batch.word_ctx[i][j]);
            if (i != j) {
                v.cross_c[i][j] = tape.input(batch.cross_c[i][j]);
                v.cross_s[i][j] = tape.input(batch.cross_s[i][j]);
            } else {
                v.cross_c[i][j] = v.pos_c[i];
                v.cross_s[i][j] = v.pos_s[i];
            }
        }
    }
    return v;
}

Var sentence_loss(Tape& tape, const BatchVars& batch) {
    const std::size_t n = batch.n;
    if (n == 0) {
        throw std::invalid_argument("sentence_loss: empty batch");
    }
    std::vector<Var> terms;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Var> logits;
        logits.push_back(tape.dot(batch.pos_c[i], batch.pos_s[i]));
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                logits.push_back(tape.dot(batch.pos_c[i], batch.cross_s[i][j]));
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                logits.push_back(tape.dot(batch.cross_c[j][i], batch.pos_s[i]));
            }
        }
        const Var stacked = tape.stack(logits);
        terms.push_back(tape.sub(tape.logsumexp(stacked), tape.entry(stacked, 0, 0)));
    }
    return tape.sum(tape.stack(terms));
}

Var word_loss(Tape& tape, const BatchVars& batch) {
    const std::size_t n = batch.n;
    if (n == 0) {
        throw std::invalid_argument("word_loss: empty batch");
    }
    std::vector<Var> terms;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t words = tape.value(batch.word_val[i]).cols();
        for (std::size_t k = 0; k < n; ++k) {
            if (tape.value(batch.word_ctx[k][i]).cols() != words) {
                throw std::invalid_argument("word_loss: mismatched word counts for narration " +
                                            std::to_string(i));
            }
        }
        for (std::size_t j = 0; j < words; ++j) {
            const Var value = tape.slice_columns(batch.word_val[i], j, j + 1);
            std::vector<Var> logits;
            logits.push_back(tape.dot(tape.slice_columns(batch.word_ctx[i][i], j, j + 1), value));
            for (std::size_t k = 0; k < n; ++k) {
                if (k != i) {
                    logits.push_back(tape.dot(tape.slice_columns(batch.word_ctx[k][i], j, j + 1), value));
                }
            }
            const Var stacked = tape.stack(logits);
            terms.push_back(tape.sub(tape.logsumexp(stacked), tape.entry(stacked, 0, 0)));
        }
    }
    return tape.sum(tape.stack(terms));
}

Var combined_loss(Tape& tape, const BatchVars& batch, double lambda) {
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("combined_loss: lambda must be non-negative");
    }
    return tape.add(word_loss(tape, batch), tape.scale(sentence_loss(tape, batch), lambda));
}

Var batch_loss(Tape& tape, const BatchVars& batch, LossMode mode, double lambda) {
    switch (mode) {
    case LossMode::Sentence: return sentence_loss(tape, batch);
    case LossMode::Word: return word_loss(tape, batch);
    case LossMode::Combined: return combined_loss(tape, batch, lambda);
    }
    throw std::invalid_argument("unknown loss mode");
}

double sentence_loss(const BatchRepresentations& batch) {
    Tape tape;
    return tape.value(sentence_loss(tape, bind_batch(tape, batch)))[0];
}

namespace {

void check_layouts(const BatchRepresentations& batch, std::span<const ModalityLayout> layouts) {
    if (layouts.size() != batch.n) {
        throw std::invalid_argument("word_loss: one layout per sample required");
    }
    for (std::size_t i = 0; i < batch.n; ++i) {
        if (batch.word_val[i].cols() != layouts[i].n_words) {
            throw std::invalid_argument("word_loss: word values do not match layout of sample " +
                                        std::to_string(i));
        }
    }
}

}  // namespace

double word_loss(const BatchRepresentations& batch, std::span<const ModalityLayout> layouts) {
    batch.validate();
    check_layouts(batch, layouts);
    Tape tape;
    return tape.value(word_loss(tape, bind_batch(tape, batch)))[0];
}

double combined_loss(const BatchRepresentations& batch, std::span<const ModalityLayout> layouts, double lambda) {
    batch.validate();
    check_layouts(batch, layouts);
    Tape tape;
    return tape.value(combined_loss(tape, bind_batch(tape, batch), lambda))[0];
}

}  // namespace comma
