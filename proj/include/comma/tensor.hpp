#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace comma {

class AttentionMask;

using Shape = std::vector<std::size_t>;

/// Thrown when an operation produces or receives NaN/Inf.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of doubles. Rank-2 tensors are the common case
/// and get matrix-style accessors; feature grids use rank 4.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<double> values);
    static Tensor identity(std::size_t n);
    static Tensor column(std::span<const double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t extent(std::size_t axis) const;

    std::size_t rows() const;
    std::size_t cols() const;

    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    /// Same data, new shape. Element count must match.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;
    void require_finite(const char* where) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::string shape_string(const Shape& shape);

/// Parameter name -> gradient tensor.
using Gradients = std::map<std::string, Tensor>;

/// Adds `g` into `grads[name]`, creating the entry on first use.
void accumulate(Gradients& grads, const std::string& name, const Tensor& g);

// Forward kernels. Every kernel validates shapes and throws
// std::invalid_argument on mismatch.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// x (m×n) plus a bias column (m×1) broadcast over columns.
Tensor add_column(const Tensor& x, const Tensor& bias);

/// Row-wise softmax restricted to allowed entries. Disallowed entries are
/// exactly zero. Throws std::domain_error("degenerate mask row") when a row
/// has no allowed entry.
Tensor masked_softmax(const Tensor& logits, const AttentionMask& mask);

/// Arithmetic mean over the listed axes. The result keeps the remaining
/// axes in order; reducing every axis yields a rank-1 tensor of extent 1.
Tensor mean_over(const Tensor& t, std::span<const std::size_t> axes);
Tensor mean_over(const Tensor& t, std::initializer_list<std::size_t> axes);

Tensor relu(const Tensor& t);
/// W x (+ b). `bias` may be empty.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1,
            const Tensor& w2, const Tensor& b2);

Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_columns(const Tensor& a, const Tensor& b);

double sum(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

// CMMA1 tensor files: ASCII header "CMMA1 <rank> <d0> ...\n" followed by
// little-endian float32 values in row-major order.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Rounds every value to the nearest float32, matching what a CMMA1
/// round trip would produce.
Tensor round_to_float(const Tensor& t);

}  // namespace comma
