#include "comma/tensor.hpp"

#include "comma/masks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace comma {

namespace {

std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(what) + ": expected a matrix, got shape " +
                                    shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto e : shape_) {
        if (e == 0) {
            throw std::invalid_argument("tensor extents must be positive");
        }
    }
    data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto e : shape_) {
        if (e == 0) {
            throw std::invalid_argument("tensor extents must be positive");
        }
    }
    if (data_.size() != product(shape_)) {
        throw std::invalid_argument("tensor data length does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

Tensor Tensor::column(std::span<const double> values) {
    return Tensor({values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw std::out_of_range("axis out of range");
    }
    return shape_[axis];
}

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols");
    return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const char* where) const {
    if (!all_finite()) {
        throw NonFiniteError(std::string("non-finite value in ") + where);
    }
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void accumulate(Gradients& grads, const std::string& name, const Tensor& g) {
    auto it = grads.find(name);
    if (it == grads.end()) {
        grads.emplace(name, g);
        return;
    }
    require_same_shape(it->second, g, "accumulate");
    auto dst = it->second.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw std::invalid_argument("matmul: inner extents differ " + shape_string(a.shape()) + " · " +
                                    shape_string(b.shape()));
    }
    Tensor out({m, n});
    auto o = out.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = o.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad[i * k + p];
            if (aip == 0.0) {
                continue;
            }
            const double* brow = bd.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] += aip * brow[j];
            }
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] += bd[i];
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] -= bd[i];
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& v : out.data()) {
        v *= s;
    }
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] *= bd[i];
    }
    return out;
}

Tensor add_column(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_column");
    require_matrix(bias, "add_column");
    if (bias.rows() != x.rows() || bias.cols() != 1) {
        throw std::invalid_argument("add_column: bias " + shape_string(bias.shape()) + " does not fit " +
                                    shape_string(x.shape()));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) += bias(i, 0);
        }
    }
    return out;
}

Tensor masked_softmax(const Tensor& logits, const AttentionMask& mask) {
    require_matrix(logits, "masked_softmax");
    const std::size_t q = logits.rows(), k = logits.cols();
    if (q != mask.size() || k != mask.size()) {
        throw std::invalid_argument("masked_softmax: mask size does not match logits " +
                                    shape_string(logits.shape()));
    }
    Tensor out({q, k});
    for (std::size_t i = 0; i < q; ++i) {
        double peak = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < k; ++j) {
            if (mask.allowed(i, j)) {
                peak = std::max(peak, logits(i, j));
                any = true;
            }
        }
        if (!any) {
            throw std::domain_error("degenerate mask row");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (mask.allowed(i, j)) {
                const double e = std::exp(logits(i, j) - peak);
                out(i, j) = e;
                total += e;
            }
        }
        for (std::size_t j = 0; j < k; ++j) {
            out(i, j) /= total;
        }
    }
    out.require_finite("masked_softmax");
    return out;
}

Tensor mean_over(const Tensor& t, std::span<const std::size_t> axes) {
    const std::size_t rank = t.rank();
    std::vector<bool> reduce(rank, false);
    std::size_t count = 1;
    for (auto a : axes) {
        if (a >= rank) {
            throw std::invalid_argument("mean_over: axis out of range");
        }
        if (reduce[a]) {
            throw std::invalid_argument("mean_over: repeated axis");
        }
        reduce[a] = true;
        count *= t.shape()[a];
    }
    if (count == 0) {
        throw std::invalid_argument("mean_over: empty axis extent");
    }
    Shape kept;
    for (std::size_t a = 0; a < rank; ++a) {
        if (!reduce[a]) {
            kept.push_back(t.shape()[a]);
        }
    }
    if (kept.empty()) {
        kept.push_back(1);
    }
    Tensor out(kept);
    // Walk the source in row-major order, mapping each index onto the kept axes.
    std::vector<std::size_t> index(rank, 0);
    auto src = t.data();
    auto dst = out.data();
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
        std::size_t target = 0;
        for (std::size_t a = 0; a < rank; ++a) {
            if (!reduce[a]) {
                target = target * t.shape()[a] + index[a];
            }
        }
        dst[target] += src[flat];
        for (std::size_t a = rank; a-- > 0;) {
            if (++index[a] < t.shape()[a]) {
                break;
            }
            index[a] = 0;
        }
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& v : dst) {
        v *= inv;
    }
    return out;
}

Tensor mean_over(const Tensor& t, std::initializer_list<std::size_t> axes) {
    return mean_over(t, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor relu(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor y = matmul(weight, x);
    if (bias.size() == 0) {
        return y;
    }
    return add_column(y, bias);
}

Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    return linear(relu(linear(x, w1, b1)), w2, b2);
}

Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_columns");
    if (begin >= end || end > x.cols()) {
        throw std::invalid_argument("slice_columns: invalid range");
    }
    Tensor out({x.rows(), end - begin});
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = begin; j < end; ++j) {
            out(i, j - begin) = x(i, j);
        }
    }
    return out;
}

Tensor concat_columns(const Tensor& a, const Tensor& b) {
    require_matrix(a, "concat_columns");
    require_matrix(b, "concat_columns");
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("concat_columns: row count mismatch");
    }
    Tensor out({a.rows(), a.cols() + b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) = a(i, j);
        }
        for (std::size_t j = 0; j < b.cols(); ++j) {
            out(i, a.cols() + j) = b(i, j);
        }
    }
    return out;
}

double sum(const Tensor& t) {
    double s = 0.0;
    for (auto v : t.data()) {
        s += v;
    }
    return s;
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (auto v : t.data()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out << "CMMA1 " << t.rank();
    for (auto e : t.shape()) {
        out << ' ' << e;
    }
    out << '\n';
    std::vector<char> buffer(t.size() * 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto word = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
        std::memcpy(buffer.data() + 4 * i, &word, 4);
    }
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!out) {
        throw std::runtime_error("failed to write tensor");
    }
}

Tensor read_tensor(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw std::runtime_error("tensor file: missing header");
    }
    std::istringstream hs(header);
    std::string magic;
    std::size_t rank = 0;
    if (!(hs >> magic >> rank) || magic != "CMMA1" || rank == 0) {
        throw std::runtime_error("tensor file: bad header '" + header + "'");
    }
    Shape shape(rank);
    for (auto& e : shape) {
        if (!(hs >> e) || e == 0) {
            throw std::runtime_error("tensor file: bad extent in header '" + header + "'");
        }
    }
    const std::size_t n = product(shape);
    std::vector<char> buffer(n * 4);
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (static_cast<std::size_t>(in.gcount()) != buffer.size()) {
        throw std::runtime_error("tensor file: truncated payload");
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t word;
        std::memcpy(&word, buffer.data() + 4 * i, 4);
        data[i] = std::bit_cast<float>(to_little_endian(word));
    }
    Tensor t(std::move(shape), std::move(data));
    t.require_finite("tensor file");
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_tensor(in);
}

Tensor round_to_float(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.data()) {
        v = static_cast<double>(static_cast<float>(v));
    }
    return out;
}

}  // namespace comma
