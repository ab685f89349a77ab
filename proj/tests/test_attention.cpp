#include "comma/attention.hpp"
#include "comma/masks.hpp"

#include "support/fd.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace comma;

TEST_CASE("modality layout") {
    const ModalityLayout layout(3, 2, 2, 2);
    CHECK(layout.n_regions() == 8);
    CHECK(layout.total() == 11);
    CHECK(layout.region_token(0, 0, 0) == 3);
    CHECK(layout.region_token(1, 1, 1) == 10);
    CHECK(layout.cell_of(layout.region_token(1, 0, 1)) == ModalityLayout::Cell{1, 0, 1});
    CHECK_THROWS(ModalityLayout(0, 1, 1, 1));
    CHECK_THROWS(layout.cell_of(0));
}

TEST_CASE("cross-modal mask") {
    SUBCASE("one word, one region") {
        const AttentionMask m = cross_modal_mask(ModalityLayout(1, 1, 1, 1));
        CHECK_FALSE(m.allowed(0, 0));
        CHECK(m.allowed(0, 1));
        CHECK(m.allowed(1, 0));
        CHECK_FALSE(m.allowed(1, 1));
    }
    SUBCASE("two words, 1x2x2 regions: exactly 16 allowed entries") {
        const ModalityLayout layout(2, 1, 2, 2);
        const AttentionMask m = cross_modal_mask(layout);
        CHECK(m.allowed_count() == 16);
        for (std::size_t q = 0; q < layout.total(); ++q)
            for (std::size_t k = 0; k < layout.total(); ++k)
                CHECK(m.allowed(q, k) == (layout.is_word(q) != layout.is_word(k)));
    }
}

TEST_CASE("self-attention masks") {
    const ModalityLayout layout(2, 2, 2, 3);
    const auto nw = layout.n_words;
    SUBCASE("spatial") {
        const AttentionMask m = self_attention_mask(layout, SelfAttentionVariant::Spatial);
        CHECK(m.allowed(layout.region_token(0, 0, 0), layout.region_token(0, 1, 2)));
        CHECK_FALSE(m.allowed(layout.region_token(0, 0, 0), layout.region_token(1, 0, 0)));
    }
    SUBCASE("temporal") {
        const AttentionMask m = self_attention_mask(layout, SelfAttentionVariant::Temporal);
        CHECK(m.allowed(layout.region_token(0, 1, 2), layout.region_token(1, 1, 2)));
        CHECK_FALSE(m.allowed(layout.region_token(0, 1, 2), layout.region_token(0, 1, 1)));
    }
    SUBCASE("spatial+temporal is the union") {
        const AttentionMask s = self_attention_mask(layout, SelfAttentionVariant::Spatial);
        const AttentionMask t = self_attention_mask(layout, SelfAttentionVariant::Temporal);
        CHECK(self_attention_mask(layout, SelfAttentionVariant::SpatialPlusTemporal) == (s | t));
    }
    SUBCASE("spatiotemporal: all region pairs") {
        const AttentionMask m = self_attention_mask(layout, SelfAttentionVariant::Spatiotemporal);
        for (std::size_t q = nw; q < layout.total(); ++q) CHECK(m.row_count(q) == layout.n_regions());
    }
    SUBCASE("invariants shared by every variant") {
        const AttentionMask cross = cross_modal_mask(layout);
        for (auto v : kAllSelfAttentionVariants) {
            const AttentionMask m = self_attention_mask(layout, v);
            CHECK((m & cross).allowed_count() == 0);
            for (std::size_t i = 0; i < layout.total(); ++i) CHECK(m.allowed(i, i));
            for (std::size_t q = 0; q < nw; ++q)
                for (std::size_t k = 0; k < nw; ++k) CHECK(m.allowed(q, k));
            CHECK(m == self_attention_mask(layout, v));
            m.validate();
        }
    }
    SUBCASE("variant names") {
        for (auto v : kAllSelfAttentionVariants) CHECK(parse_sa_variant(to_string(v)) == v);
        CHECK(to_string(SelfAttentionVariant::SpatialPlusTemporal) == "spatial+temporal");
        CHECK_THROWS_AS(parse_sa_variant("diagonal"), std::invalid_argument);
    }
}

TEST_CASE("full mask and dump") {
    const ModalityLayout layout(1, 1, 1, 2);
    CHECK(full_attention_mask(layout).allowed_count() == 9);
    std::ostringstream out;
    dump_mask(out, cross_modal_mask(layout));
    CHECK(out.str() == "011\n100\n100\n");
}

TEST_CASE("attention matches the loop oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const ModalityLayout layout(2, 2, 2, 2);
        const std::size_t n = layout.total(), d = 4;
        const AttentionMask mask = trial % 2 ? cross_modal_mask(layout)
                                             : self_attention_mask(layout, kAllSelfAttentionVariants[trial % 4]);
        const Tensor k = oracle::random_tensor({d, n}, rng);
        const Tensor q = oracle::random_tensor({d, n}, rng);
        const Tensor v = oracle::random_tensor({d, n}, rng);
        const AttentionOutput got = attention(k, q, v, mask);
        const auto want = oracle::attention(oracle::from(k), oracle::from(q), oracle::from(v),
                                            [&](std::size_t a, std::size_t b) { return mask.allowed(a, b); });
        CHECK(oracle::max_abs_diff(oracle::from(got.context), want.context) <= 1e-12);
        CHECK(oracle::max_abs_diff(oracle::from(got.weights), want.weights) <= 1e-12);
    }
}

TEST_CASE("attention edge cases") {
    SUBCASE("single key receives weight 1") {
        const ModalityLayout layout(1, 1, 1, 1);
        const Tensor y = Tensor::matrix(2, 2, {1, 2, 3, 4});
        const AttentionOutput out = cross_attention_layer(y, layout);
        CHECK(out.weights(0, 1) == 1.0);
        CHECK(out.weights(1, 0) == 1.0);
        CHECK(out.context == Tensor::matrix(2, 2, {2, 1, 4, 3}));
    }
    SUBCASE("equal keys give uniform weights and the value mean") {
        const ModalityLayout layout(1, 1, 1, 3);
        Tensor y({2, 4});
        y(0, 0) = 1.0;
        y(1, 0) = 1.0;
        for (std::size_t c = 1; c < 4; ++c) {
            y(0, c) = 0.5;
            y(1, c) = -0.5;
        }
        const AttentionOutput out = cross_attention_layer(y, layout);
        for (std::size_t c = 1; c < 4; ++c) CHECK(std::abs(out.weights(0, c) - 1.0 / 3.0) <= 1e-15);
    }
    SUBCASE("cross-attention projections must be identities") {
        AttentionLayerParams p = AttentionLayerParams::cross(3);
        p.validate();
        p.w_k(0, 1) = 0.1;
        CHECK_THROWS(p.validate());
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(attention(Tensor({2, 3}), Tensor({3, 3}), Tensor({2, 3}), AttentionMask(3, true)),
                        std::invalid_argument);
    }
}

TEST_CASE("cross-attention never mixes modalities") {
    std::mt19937_64 rng(12);
    const ModalityLayout layout(3, 2, 2, 2);
    const std::size_t d = 5, nw = layout.n_words;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor y = oracle::random_tensor({d, layout.total()}, rng);
        const AttentionOutput base = cross_attention_layer(y, layout);
        // Word outputs are built from region values only, so overwriting word
        // values while holding keys and queries fixed leaves them untouched.
        Tensor values = y;
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t j = 0; j < nw; ++j) values(c, j) = 1e3 * (trial + 1);
        const AttentionOutput swapped = attention(y, y, values, cross_modal_mask(layout));
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t j = 0; j < nw; ++j) CHECK(swapped.context(c, j) == base.context(c, j));
        for (std::size_t q = 0; q < layout.total(); ++q)
            for (std::size_t k = 0; k < layout.total(); ++k)
                if (layout.is_word(q) == layout.is_word(k)) CHECK(base.weights(q, k) == 0.0);
    }
}

TEST_CASE("self-attention layer keeps modalities apart") {
    std::mt19937_64 rng(13);
    const ModalityLayout layout(2, 2, 2, 2);
    const std::size_t d = 4;
    const auto params = AttentionLayerParams::self(oracle::random_tensor({d, d}, rng),
                                                   oracle::random_tensor({d, d}, rng),
                                                   oracle::random_tensor({d, d}, rng));
    const Tensor y = oracle::random_tensor({d, layout.total()}, rng);
    for (auto v : kAllSelfAttentionVariants) {
        const AttentionOutput out = self_attention_layer(y, layout, params, v);
        const AttentionMask mask = self_attention_mask(layout, v);
        for (std::size_t q = 0; q < layout.total(); ++q) {
            double s = 0.0;
            for (std::size_t k = 0; k < layout.total(); ++k) {
                if (!mask.allowed(q, k)) CHECK(out.weights(q, k) == 0.0);
                s += out.weights(q, k);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("taped attention agrees with the value path and finite differences") {
    std::mt19937_64 rng(14);
    const ModalityLayout layout(2, 1, 2, 2);
    const std::size_t d = 3, n = layout.total();
    const AttentionMask mask = self_attention_mask(layout, SelfAttentionVariant::Spatial);
    const Tensor y = oracle::random_tensor({d, n}, rng);
    const Tensor wk = oracle::random_tensor({d, d}, rng), wq = oracle::random_tensor({d, d}, rng),
                 wv = oracle::random_tensor({d, d}, rng);

    Tape tape;
    const ProjectionVars pv{tape.input(wk), tape.input(wq), tape.input(wv)};
    const AttentionVars av = attend(tape, tape.input(y), pv, mask);
    const AttentionOutput ref = attend(y, AttentionLayerParams::self(wk, wq, wv), mask);
    CHECK(max_abs_diff(tape.value(av.context), ref.context) <= 1e-14);
    CHECK(max_abs_diff(tape.value(av.weights), ref.weights) <= 1e-14);

    CHECK(fd::max_rel_error({y, wk, wq, wv},
                            [&](Tape& t, const auto& v) {
                                return attend(t, v[0], ProjectionVars{v[1], v[2], v[3]}, mask).context;
                            },
                            rng) <= 1e-4);
    CHECK(fd::max_rel_error({y},
                            [&](Tape& t, const auto& v) {
                                return attend(t, v[0], std::nullopt, cross_modal_mask(layout)).context;
                            },
                            rng) <= 1e-4);
}
