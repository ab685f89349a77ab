#include "comma/model.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

using namespace comma;

namespace {

CommaConfig small_config(SelfAttentionVariant v = SelfAttentionVariant::Spatiotemporal) {
    CommaConfig cfg;
    cfg.d_video_in = 5;
    cfg.d_word_in = 6;
    cfg.d_model = 4;
    cfg.sa_variant = v;
    cfg.seed = 3;
    return cfg;
}

Tensor permute_columns(const Tensor& m, const std::vector<std::size_t>& perm) {
    Tensor out(m.shape());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, perm[c]);
    return out;
}

}  // namespace

TEST_CASE("parameter initialization") {
    const CommaConfig cfg = small_config();
    const CommaParams a = init_params(cfg);
    const CommaParams b = init_params(cfg);
    const auto na = a.named(), nb = b.named();
    REQUIRE(na.size() == 13);
    for (std::size_t i = 0; i < na.size(); ++i) CHECK(*na[i].second == *nb[i].second);
    CHECK(a.video_proj.weight.shape() == Shape{4, 5});
    CHECK(a.word_proj.fc1.weight.shape() == Shape{4, 6});
    CHECK(a.sa_w_k.shape() == Shape{4, 4});
    CHECK(max_abs(a.video_proj.bias) == 0.0);
    const double bound = std::sqrt(6.0 / 9.0);
    CHECK(max_abs(a.video_proj.weight) <= bound);

    CommaConfig other = cfg;
    other.seed = 4;
    CHECK_FALSE(init_params(other).sa_w_q == a.sa_w_q);
}

TEST_CASE("forward matches a composition of loop oracles") {
    std::mt19937_64 rng(21);
    const CommaConfig cfg = small_config();
    const CommaParams p = init_params(cfg);
    const Tensor clip = oracle::random_tensor({5, 2, 2, 2}, rng);
    const Tensor words = oracle::random_tensor({6, 3}, rng);
    const ModalityLayout layout = layout_for(clip, words);

    const Embedded e = embed(clip, words, p);
    const CommaOutput out = forward(e.clip, e.words, layout, p, cfg.sa_variant);

    // Oracle: same recipe with plain loops.
    using oracle::Matrix;
    auto from = oracle::from;
    const Matrix c0 = oracle::affine(from(p.video_proj.weight), from(flatten_clip(clip)), from(p.video_proj.bias));
    const Matrix s0 = oracle::affine(
        from(p.word_proj.fc2.weight),
        oracle::relu(oracle::affine(from(p.word_proj.fc1.weight), from(words), from(p.word_proj.fc1.bias))),
        from(p.word_proj.fc2.bias));
    Matrix y(4, std::vector<double>(layout.total()));
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t j = 0; j < 3; ++j) y[r][j] = s0[r][j];
        for (std::size_t j = 0; j < 8; ++j) y[r][3 + j] = c0[r][j];
    }
    const AttentionMask ca = cross_modal_mask(layout);
    const AttentionMask sa = self_attention_mask(layout, cfg.sa_variant);
    auto ca_ok = [&](std::size_t a, std::size_t b) { return ca.allowed(a, b); };
    auto sa_ok = [&](std::size_t a, std::size_t b) { return sa.allowed(a, b); };
    const auto l1 = oracle::attention(y, y, y, ca_ok);
    const auto l2 = oracle::attention(oracle::matmul(from(p.sa_w_k), l1.context),
                                      oracle::matmul(from(p.sa_w_q), l1.context),
                                      oracle::matmul(from(p.sa_w_v), l1.context), sa_ok);
    const auto l3 = oracle::attention(l2.context, l2.context, l2.context, ca_ok);

    CHECK(oracle::max_abs_diff(from(out.layer_weights[0]), l1.weights) <= 1e-12);
    CHECK(oracle::max_abs_diff(from(out.layer_weights[1]), l2.weights) <= 1e-12);
    CHECK(oracle::max_abs_diff(from(out.layer_weights[2]), l3.weights) <= 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(out.s_ca2(r, j) - l3.context[r][j]) <= 1e-12);
        for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out.c_ca2(r, j) - l3.context[r][3 + j]) <= 1e-12);
    }

    const Pooled pooled = pool(out, layout);
    for (std::size_t r = 0; r < 4; ++r) {
        double cs = 0.0, ss = 0.0;
        for (std::size_t j = 0; j < 8; ++j) cs += l3.context[r][3 + j];
        for (std::size_t j = 0; j < 3; ++j) ss += l3.context[r][j];
        CHECK(std::abs(pooled.c_hat[r] - cs / 8) <= 1e-12);
        CHECK(std::abs(pooled.s_hat[r] - ss / 3) <= 1e-12);
    }
}

TEST_CASE("every attention matrix of a forward is stochastic on its mask") {
    std::mt19937_64 rng(22);
    for (auto v : kAllSelfAttentionVariants) {
        const CommaConfig cfg = small_config(v);
        const CommaParams p = init_params(cfg);
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor clip = oracle::random_tensor({5, 2, 2, 3}, rng, 3.0);
            const Tensor words = oracle::random_tensor({6, 2}, rng, 3.0);
            const ModalityLayout layout = layout_for(clip, words);
            const Embedded e = embed(clip, words, p);
            const CommaOutput out = forward(e.clip, e.words, layout, p, v);
            const AttentionMask masks[3] = {cross_modal_mask(layout), self_attention_mask(layout, v),
                                            cross_modal_mask(layout)};
            for (int l = 0; l < 3; ++l) {
                for (std::size_t q = 0; q < layout.total(); ++q) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < layout.total(); ++k) {
                        if (!masks[l].allowed(q, k)) CHECK(out.layer_weights[l](q, k) == 0.0);
                        s += out.layer_weights[l](q, k);
                    }
                    CHECK(std::abs(s - 1.0) <= 1e-12);
                }
            }
        }
    }
}

TEST_CASE("pooled sentence vector ignores word order") {
    std::mt19937_64 rng(23);
    for (auto v : kAllSelfAttentionVariants) {
        const CommaConfig cfg = small_config(v);
        const CommaParams p = init_params(cfg);
        const Tensor clip = oracle::random_tensor({5, 2, 2, 2}, rng);
        const Tensor words = oracle::random_tensor({6, 4}, rng);
        std::vector<std::size_t> perm(4);
        std::iota(perm.begin(), perm.end(), 0);
        for (int trial = 0; trial < 5; ++trial) {
            std::shuffle(perm.begin(), perm.end(), rng);
            const Tensor shuffled = permute_columns(words, perm);
            const auto a = embed(clip, words, p);
            const auto b = embed(clip, shuffled, p);
            const ModalityLayout layout = layout_for(clip, words);
            const Pooled pa = pool(forward(a.clip, a.words, layout, p, v), layout);
            const Pooled pb = pool(forward(b.clip, b.words, layout, p, v), layout);
            CHECK(max_abs_diff(pa.s_hat, pb.s_hat) <= 1e-12);
            CHECK(max_abs_diff(pa.c_hat, pb.c_hat) <= 1e-12);
        }
    }
}

TEST_CASE("pooled clip vector ignores region order under spatiotemporal self-attention") {
    std::mt19937_64 rng(24);
    const CommaConfig cfg = small_config();
    const CommaParams p = init_params(cfg);
    const Tensor clip = oracle::random_tensor({5, 2, 2, 2}, rng);
    const Tensor words = oracle::random_tensor({6, 3}, rng);
    const ModalityLayout layout = layout_for(clip, words);
    const Embedded e = embed(clip, words, p);
    const Pooled base = pool(forward(e.clip, e.words, layout, p, cfg.sa_variant), layout);

    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(perm.begin(), perm.end(), rng);
        const Tensor shuffled = permute_columns(e.clip, perm);
        const Pooled got = pool(forward(shuffled, e.words, layout, p, cfg.sa_variant), layout);
        CHECK(max_abs_diff(got.c_hat, base.c_hat) <= 1e-12);
        CHECK(max_abs_diff(got.s_hat, base.s_hat) <= 1e-12);
    }
}

TEST_CASE("taped forward equals the value forward") {
    std::mt19937_64 rng(25);
    for (auto v : kAllSelfAttentionVariants) {
        const CommaConfig cfg = small_config(v);
        const CommaParams p = init_params(cfg);
        const Tensor clip = oracle::random_tensor({5, 2, 2, 2}, rng);
        const Tensor words = oracle::random_tensor({6, 3}, rng);
        const ModalityLayout layout = layout_for(clip, words);

        Tape tape;
        const ParamVars pv = bind_params(tape, p);
        const EmbeddedVars ev = embed(tape, pv, tape.input(flatten_clip(clip)), tape.input(words));
        const CommaVars out = forward(tape, pv, ev.clip, ev.words, layout, v);
        const PooledVars pooled = pool(tape, out);

        const Embedded e = embed(clip, words, p);
        const CommaOutput ref = forward(e.clip, e.words, layout, p, v);
        const Pooled pref = pool(ref, layout);
        CHECK(tape.value(out.c_ca2) == ref.c_ca2);
        CHECK(tape.value(out.s_ca2) == ref.s_ca2);
        CHECK(tape.value(pooled.c_hat) == pref.c_hat);
        CHECK(tape.value(pooled.s_hat) == pref.s_hat);
    }
}

TEST_CASE("input validation") {
    const CommaParams p = init_params(small_config());
    CHECK_THROWS_AS(embed(Tensor({4, 2, 2, 2}), Tensor({6, 3}), p), std::invalid_argument);
    CHECK_THROWS_AS(embed(Tensor({5, 2, 2, 2}), Tensor({5, 3}), p), std::invalid_argument);
    CHECK_THROWS_AS(flatten_clip(Tensor({5, 8})), std::invalid_argument);
    CommaConfig bad = small_config();
    bad.d_model = 0;
    CHECK_THROWS_AS(init_params(bad), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "comma_test_checkpoint";
    std::filesystem::remove_all(dir);
    const CommaConfig cfg = small_config(SelfAttentionVariant::Temporal);
    CommaParams p = init_params(cfg);
    p.sa_w_v = round_to_float(p.sa_w_v);
    save_checkpoint(dir, cfg, p);
    const Checkpoint back = load_checkpoint(dir);
    CHECK(back.config.d_model == cfg.d_model);
    CHECK(back.config.sa_variant == SelfAttentionVariant::Temporal);
    CHECK(back.params.sa_w_v == p.sa_w_v);
    const auto a = back.params.named();
    const auto b = p.named();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == round_to_float(*b[i].second));
    std::filesystem::remove(dir / "sa.w_k.cmma");
    CHECK_THROWS(load_checkpoint(dir));
    std::filesystem::remove_all(dir);
}
