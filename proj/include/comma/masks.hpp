#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace comma {

/// Token layout of a concatenated word + region sequence.
///
/// Words come first, followed by the T·H·W regions in (t, h, w) row-major
/// order. Every mask, attention matrix and rollout in the library uses this
/// ordering.
struct ModalityLayout {
    std::size_t n_words = 1;
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    ModalityLayout() = default;
    ModalityLayout(std::size_t n_words, std::size_t t, std::size_t h, std::size_t w);

    std::size_t n_regions() const noexcept { return t * h * w; }
    std::size_t total() const noexcept { return n_words + n_regions(); }
    /// Spatial positions per frame (H·W).
    std::size_t spatial() const noexcept { return h * w; }

    bool is_word(std::size_t token) const noexcept { return token < n_words; }
    std::size_t region_token(std::size_t ti, std::size_t hi, std::size_t wi) const;

    struct Cell {
        std::size_t t, h, w;
        friend bool operator==(const Cell&, const Cell&) = default;
    };
    /// Grid cell of a region token (token index >= n_words).
    Cell cell_of(std::size_t token) const;

    void validate() const;

    friend bool operator==(const ModalityLayout&, const ModalityLayout&) = default;
};

/// Boolean matrix over (query, key) token pairs. Rows are queries.
class AttentionMask {
public:
    AttentionMask() = default;
    explicit AttentionMask(std::size_t n, bool fill = false);

    std::size_t size() const noexcept { return n_; }
    bool allowed(std::size_t query, std::size_t key) const { return bits_[query * n_ + key] != 0; }
    void set(std::size_t query, std::size_t key, bool value) { bits_[query * n_ + key] = value ? 1 : 0; }

    std::size_t row_count(std::size_t query) const;
    std::size_t allowed_count() const;

    /// Throws std::domain_error if some row has no allowed key.
    void validate() const;

    AttentionMask operator&(const AttentionMask& other) const;
    AttentionMask operator|(const AttentionMask& other) const;

    friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class SelfAttentionVariant { Spatial, Temporal, SpatialPlusTemporal, Spatiotemporal };

std::string_view to_string(SelfAttentionVariant v);
SelfAttentionVariant parse_sa_variant(std::string_view name);
inline constexpr SelfAttentionVariant kAllSelfAttentionVariants[] = {
    SelfAttentionVariant::Spatial, SelfAttentionVariant::Temporal,
    SelfAttentionVariant::SpatialPlusTemporal, SelfAttentionVariant::Spatiotemporal};

/// Words attend only to regions and regions only to words.
AttentionMask cross_modal_mask(const ModalityLayout& layout);

/// Words attend to all words. Region pairs are allowed according to the
/// variant: same frame (Spatial), same position (Temporal), either
/// (SpatialPlusTemporal) or all (Spatiotemporal). No cross-modal pairs.
AttentionMask self_attention_mask(const ModalityLayout& layout, SelfAttentionVariant variant);

AttentionMask full_attention_mask(const ModalityLayout& layout);

/// One line per query row, '1' for allowed keys.
void dump_mask(std::ostream& out, const AttentionMask& mask);

}  // namespace comma
