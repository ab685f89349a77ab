#include "comma/masks.hpp"

#include <ostream>
#include <stdexcept>

namespace comma {

ModalityLayout::ModalityLayout(std::size_t n_words_, std::size_t t_, std::size_t h_, std::size_t w_)
    : n_words(n_words_), t(t_), h(h_), w(w_) {
    validate();
}

void ModalityLayout::validate() const {
    if (n_words == 0 || t == 0 || h == 0 || w == 0) {
        throw std::invalid_argument("modality layout extents must be positive");
    }
}

std::size_t ModalityLayout::region_token(std::size_t ti, std::size_t hi, std::size_t wi) const {
    if (ti >= t || hi >= h || wi >= w) {
        throw std::out_of_range("grid cell outside layout");
    }
    return n_words + (ti * h + hi) * w + wi;
}

ModalityLayout::Cell ModalityLayout::cell_of(std::size_t token) const {
    if (token < n_words || token >= total()) {
        throw std::out_of_range("token is not a region");
    }
    const std::size_t r = token - n_words;
    return {r / (h * w), (r / w) % h, r % w};
}

AttentionMask::AttentionMask(std::size_t n, bool fill) : n_(n), bits_(n * n, fill ? 1 : 0) {}

std::size_t AttentionMask::row_count(std::size_t query) const {
    std::size_t count = 0;
    for (std::size_t k = 0; k < n_; ++k) {
        count += bits_[query * n_ + k];
    }
    return count;
}

std::size_t AttentionMask::allowed_count() const {
    std::size_t count = 0;
    for (auto b : bits_) {
        count += b;
    }
    return count;
}

void AttentionMask::validate() const {
    for (std::size_t q = 0; q < n_; ++q) {
        if (row_count(q) == 0) {
            throw std::domain_error("degenerate mask row");
        }
    }
}

AttentionMask AttentionMask::operator&(const AttentionMask& other) const {
    if (n_ != other.n_) {
        throw std::invalid_argument("mask size mismatch");
    }
    AttentionMask out(n_);
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        out.bits_[i] = bits_[i] & other.bits_[i];
    }
    return out;
}

AttentionMask AttentionMask::operator|(const AttentionMask& other) const {
    if (n_ != other.n_) {
        throw std::invalid_argument("mask size mismatch");
    }
    AttentionMask out(n_);
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        out.bits_[i] = bits_[i] | other.bits_[i];
    }
    return out;
}

std::string_view to_string(SelfAttentionVariant v) {
    switch (v) {
    case SelfAttentionVariant::Spatial: return "spatial";
    case SelfAttentionVariant::Temporal: return "temporal";
    case SelfAttentionVariant::SpatialPlusTemporal: return "spatial+temporal";
    case SelfAttentionVariant::Spatiotemporal: return "spatiotemporal";
    }
    return "unknown";
}

SelfAttentionVariant parse_sa_variant(std::string_view name) {
    for (auto v : kAllSelfAttentionVariants) {
        if (to_string(v) == name) {
            return v;
        }
    }
    throw std::invalid_argument("unknown self-attention variant: " + std::string(name));
}

AttentionMask cross_modal_mask(const ModalityLayout& layout) {
    layout.validate();
    const std::size_t n = layout.total();
    AttentionMask mask(n);
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = 0; k < n; ++k) {
            mask.set(q, k, layout.is_word(q) != layout.is_word(k));
        }
    }
    return mask;
}

AttentionMask self_attention_mask(const ModalityLayout& layout, SelfAttentionVariant variant) {
    layout.validate();
    const std::size_t n = layout.total();
    AttentionMask mask(n);
    for (std::size_t q = 0; q < layout.n_words; ++q) {
        for (std::size_t k = 0; k < layout.n_words; ++k) {
            mask.set(q, k, true);
        }
    }
    for (std::size_t q = layout.n_words; q < n; ++q) {
        const auto a = layout.cell_of(q);
        for (std::size_t k = layout.n_words; k < n; ++k) {
            const auto b = layout.cell_of(k);
            const bool same_frame = a.t == b.t;
            const bool same_position = a.h == b.h && a.w == b.w;
            bool allow = false;
            switch (variant) {
            case SelfAttentionVariant::Spatial: allow = same_frame; break;
            case SelfAttentionVariant::Temporal: allow = same_position; break;
            case SelfAttentionVariant::SpatialPlusTemporal: allow = same_frame || same_position; break;
            case SelfAttentionVariant::Spatiotemporal: allow = true; break;
            }
            mask.set(q, k, allow);
        }
    }
    return mask;
}

AttentionMask full_attention_mask(const ModalityLayout& layout) {
    layout.validate();
    return AttentionMask(layout.total(), true);
}

void dump_mask(std::ostream& out, const AttentionMask& mask) {
    for (std::size_t q = 0; q < mask.size(); ++q) {
        for (std::size_t k = 0; k < mask.size(); ++k) {
            out << (mask.allowed(q, k) ? '1' : '0');
        }
        out << '\n';
    }
}

}  // namespace comma
