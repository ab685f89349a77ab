#include "comma/inference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace comma {

namespace {

constexpr double kStochasticTolerance = 1e-9;

Tensor residual_normalized(const Tensor& a) {
    const std::size_t n = a.rows();
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = 0.5 * (a(i, j) + (i == j ? 1.0 : 0.0));
            total += out(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) /= total;
        }
    }
    return out;
}

// Source coordinate for target index i under the aligned-corners mapping.
double source_coord(std::size_t i, std::size_t src, std::size_t dst) {
    if (src == 1 || dst == 1) {
        return 0.0;
    }
    return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
}

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

Tap tap(std::size_t i, std::size_t src, std::size_t dst) {
    const double s = source_coord(i, src, dst);
    std::size_t lo = static_cast<std::size_t>(std::floor(s));
    if (lo >= src - 1) {
        return {src - 1, src - 1, 0.0};
    }
    return {lo, lo + 1, s - static_cast<double>(lo)};
}

double lerp(double a, double b, double t) {
    return a + t * (b - a);
}

}  // namespace

Tensor attention_rollout(const std::array<Tensor, 3>& layer_weights, const ModalityLayout& layout) {
    const std::size_t n = layout.total();
    for (const auto& a : layer_weights) {
        if (a.rank() != 2 || a.rows() != n || a.cols() != n) {
            throw std::invalid_argument("attention_rollout: weights must be total × total");
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (a(i, j) < 0.0) {
                    throw std::invalid_argument("attention_rollout: negative attention weight");
                }
                s += a(i, j);
            }
            if (std::abs(s - 1.0) > kStochasticTolerance) {
                throw std::invalid_argument("attention_rollout: non-stochastic input row");
            }
        }
    }
    const Tensor ca1 = residual_normalized(layer_weights[0]);
    const Tensor sa = residual_normalized(layer_weights[1]);
    const Tensor ca2 = residual_normalized(layer_weights[2]);
    return matmul(matmul(ca2, sa), ca1);
}

Heatmap heatmap_from_rollout(const Tensor& rollout, const ModalityLayout& layout) {
    if (rollout.rank() != 2 || rollout.rows() != layout.total() || rollout.cols() != layout.total()) {
        throw std::invalid_argument("heatmap_from_rollout: rollout does not match layout");
    }
    Tensor values({layout.t, layout.h, layout.w});
    for (std::size_t r = 0; r < layout.n_regions(); ++r) {
        double s = 0.0;
        for (std::size_t word = 0; word < layout.n_words; ++word) {
            s += rollout(word, layout.n_words + r);
        }
        values[r] = s / static_cast<double>(layout.n_words);
    }
    return {values};
}

Heatmap upsample(const Heatmap& heatmap, const Resolution& target) {
    const std::size_t st = heatmap.frames(), sh = heatmap.height(), sw = heatmap.width();
    if (target.t < st || target.h < sh || target.w < sw) {
        throw std::invalid_argument("upsample: target resolution is smaller than the source");
    }
    std::vector<Tap> tt(target.t), th(target.h), tw(target.w);
    for (std::size_t i = 0; i < target.t; ++i) tt[i] = tap(i, st, target.t);
    for (std::size_t i = 0; i < target.h; ++i) th[i] = tap(i, sh, target.h);
    for (std::size_t i = 0; i < target.w; ++i) tw[i] = tap(i, sw, target.w);

    Tensor out({target.t, target.h, target.w});
    for (std::size_t t = 0; t < target.t; ++t) {
        for (std::size_t y = 0; y < target.h; ++y) {
            for (std::size_t x = 0; x < target.w; ++x) {
                const auto& a = tt[t];
                const auto& b = th[y];
                const auto& c = tw[x];
                auto plane = [&](std::size_t ti) {
                    const double top = lerp(heatmap.at(ti, b.lo, c.lo), heatmap.at(ti, b.lo, c.hi), c.frac);
                    const double bottom = lerp(heatmap.at(ti, b.hi, c.lo), heatmap.at(ti, b.hi, c.hi), c.frac);
                    return lerp(top, bottom, b.frac);
                };
                out[(t * target.h + y) * target.w + x] = lerp(plane(a.lo), plane(a.hi), a.frac);
            }
        }
    }
    return {out};
}

PixelLocation mode_pixel(const Heatmap& heatmap) {
    PixelLocation best;
    double peak = heatmap.at(0, 0, 0);
    for (std::size_t t = 0; t < heatmap.frames(); ++t) {
        const auto p = mode_pixel_in_frame(heatmap, t);
        if (heatmap.at(p.t, p.y, p.x) > peak) {
            peak = heatmap.at(p.t, p.y, p.x);
            best = p;
        }
    }
    return best;
}

PixelLocation mode_pixel_in_frame(const Heatmap& heatmap, std::size_t t) {
    if (t >= heatmap.frames()) {
        throw std::out_of_range("mode_pixel_in_frame: frame outside heatmap");
    }
    PixelLocation best{t, 0, 0};
    double peak = heatmap.at(t, 0, 0);
    for (std::size_t y = 0; y < heatmap.height(); ++y) {
        for (std::size_t x = 0; x < heatmap.width(); ++x) {
            if (heatmap.at(t, y, x) > peak) {
                peak = heatmap.at(t, y, x);
                best = {t, y, x};
            }
        }
    }
    return best;
}

Grounding ground(const CommaParams& params, SelfAttentionVariant variant, const Tensor& clip_features,
                 const Tensor& word_features, const Resolution& target) {
    const ModalityLayout layout = layout_for(clip_features, word_features);
    const Embedded e = embed(clip_features, word_features, params);
    const CommaOutput out = forward(e.clip, e.words, layout, params, variant);
    Grounding g;
    g.coarse = heatmap_from_rollout(attention_rollout(out.layer_weights, layout), layout);
    g.heatmap = upsample(g.coarse, target);
    g.pixel = mode_pixel(g.heatmap);
    return g;
}

void export_heatmap(const std::filesystem::path& dir, const Heatmap& heatmap) {
    std::filesystem::create_directories(dir);
    const double peak = max_abs(heatmap.values);
    for (std::size_t t = 0; t < heatmap.frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03zu.pgm", t);
        std::ofstream out(dir / name);
        if (!out) {
            throw std::runtime_error("cannot write heatmap frame in " + dir.string());
        }
        out << "P2\n" << heatmap.width() << ' ' << heatmap.height() << "\n255\n";
        for (std::size_t y = 0; y < heatmap.height(); ++y) {
            for (std::size_t x = 0; x < heatmap.width(); ++x) {
                const double v = peak > 0.0 ? heatmap.at(t, y, x) / peak : 0.0;
                out << (x ? " " : "") << static_cast<int>(std::lround(255.0 * v));
            }
            out << '\n';
        }
    }
    std::ofstream csv(dir / "heatmap.csv");
    if (!csv) {
        throw std::runtime_error("cannot write heatmap.csv in " + dir.string());
    }
    csv << "t,y,x,value\n";
    char line[96];
    for (std::size_t t = 0; t < heatmap.frames(); ++t) {
        for (std::size_t y = 0; y < heatmap.height(); ++y) {
            for (std::size_t x = 0; x < heatmap.width(); ++x) {
                std::snprintf(line, sizeof(line), "%zu,%zu,%zu,%.9g\n", t, y, x,
                              static_cast<double>(static_cast<float>(heatmap.at(t, y, x))));
                csv << line;
            }
        }
    }
}

Heatmap read_heatmap_csv(const std::filesystem::path& path, const Resolution& res) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "t,y,x,value") {
        throw std::runtime_error("unexpected heatmap CSV header in " + path.string());
    }
    Tensor values({res.t, res.h, res.w});
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        std::size_t t, y, x;
        double v;
        if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf", &t, &y, &x, &v) != 4 || t >= res.t || y >= res.h ||
            x >= res.w) {
            throw std::runtime_error("malformed heatmap CSV row: " + line);
        }
        values[(t * res.h + y) * res.w + x] = static_cast<double>(static_cast<float>(v));
        ++rows;
    }
    if (rows != values.size()) {
        throw std::runtime_error("heatmap CSV row count does not match resolution");
    }
    return {values};
}

}  // namespace comma
