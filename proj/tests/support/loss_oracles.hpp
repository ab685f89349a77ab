#pragma once

#include "comma/losses.hpp"
#include "support/oracles.hpp"

#include <random>
#include <vector>

namespace oracle {

inline comma::BatchRepresentations random_batch(std::size_t n, std::size_t d, const std::vector<std::size_t>& words,
                                                 std::mt19937_64& rng) {
    comma::BatchRepresentations b;
    b.n = n;
    b.cross_c.assign(n, std::vector<comma::Tensor>(n));
    b.cross_s.assign(n, std::vector<comma::Tensor>(n));
    b.word_ctx.assign(n, std::vector<comma::Tensor>(n));
    for (std::size_t i = 0; i < n; ++i) {
        b.pos_c.push_back(random_tensor({d, 1}, rng));
        b.pos_s.push_back(random_tensor({d, 1}, rng));
        b.word_val.push_back(random_tensor({d, words[i]}, rng));
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            b.cross_c[i][j] = i == j ? b.pos_c[i] : random_tensor({d, 1}, rng);
            b.cross_s[i][j] = i == j ? b.pos_s[i] : random_tensor({d, 1}, rng);
            b.word_ctx[i][j] = random_tensor({d, words[j]}, rng);
        }
    return b;
}

inline std::vector<comma::ModalityLayout> layouts_for(const std::vector<std::size_t>& words) {
    std::vector<comma::ModalityLayout> out;
    for (auto w : words) out.emplace_back(w, 1, 1, 1);
    return out;
}

inline std::vector<double> vec(const comma::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double sentence_oracle(const comma::BatchRepresentations& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < b.n; ++i) {
        const double pos = dot(vec(b.pos_c[i]), vec(b.pos_s[i]));
        std::vector<double> logits{pos};
        for (std::size_t j = 0; j < b.n; ++j)
            if (j != i) {
                logits.push_back(dot(vec(b.pos_c[i]), vec(b.cross_s[i][j])));
                logits.push_back(dot(vec(b.cross_c[j][i]), vec(b.pos_s[i])));
            }
        total += log_sum_exp(logits) - pos;
    }
    return total;
}

inline double word_oracle(const comma::BatchRepresentations& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < b.n; ++i) {
        const auto val = from(b.word_val[i]);
        for (std::size_t j = 0; j < val[0].size(); ++j) {
            const auto v = column(val, j);
            const double pos = dot(column(from(b.word_ctx[i][i]), j), v);
            std::vector<double> logits{pos};
            for (std::size_t k = 0; k < b.n; ++k)
                if (k != i) logits.push_back(dot(column(from(b.word_ctx[k][i]), j), v));
            total += log_sum_exp(logits) - pos;
        }
    }
    return total;
}

}  // namespace oracle
