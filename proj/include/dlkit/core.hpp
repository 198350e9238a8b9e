#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dlkit {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments, bad shapes, bad files, violated provenance.
class ValidationError : public Error {
public:
    using Error::Error;
};

// NaN/Inf appeared during optimization.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Dense row-major f32 matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    static Matrix identity(std::size_t n);
    // Rows given as nested initializer lists; all rows must have equal length.
    static Matrix from_rows(const std::vector<std::vector<float>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<float> col(std::size_t c) const;
    void set_col(std::size_t c, std::span<const float> v);

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    const std::vector<float>& values() const noexcept { return data_; }

    Matrix transposed() const;
    // Rows selected by index, in the given order.
    Matrix select_rows(std::span<const std::size_t> idx) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

struct SparseEntry {
    std::uint32_t index = 0;
    float value = 0.0f;
    friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

// Per-sample sparse feature vector; indices strictly increasing and < dim.
struct SparseCode {
    std::uint32_t dim = 0;
    std::vector<SparseEntry> entries;

    std::size_t nnz() const noexcept { return entries.size(); }
    std::vector<float> dense() const;
    // Throws ValidationError if indices are unsorted, duplicated or out of range.
    void validate() const;

    friend bool operator==(const SparseCode&, const SparseCode&) = default;
};

// Builds a code from unordered (index, value) pairs, summing repeated indices.
SparseCode make_code(std::uint32_t dim, std::vector<SparseEntry> entries);

// Decoder (d x M), pre-bias (d) and, for the TopK SAE, an encoder (M x d).
struct Dictionary {
    Matrix w_dec;
    std::vector<float> b_pre;
    std::optional<Matrix> w_enc;

    std::size_t d() const noexcept { return w_dec.rows(); }
    std::size_t m() const noexcept { return w_dec.cols(); }

    // Largest |norm - 1| over decoder columns.
    double max_column_norm_error() const;
    void normalize_columns();
    void validate() const;

    friend bool operator==(const Dictionary&, const Dictionary&) = default;
};

// Indices of the K largest entries by value; ties go to the lower index.
std::vector<std::uint32_t> topk_select(std::span<const float> v, std::size_t k);
std::vector<std::uint32_t> topk_select(std::span<const double> v, std::size_t k);

inline constexpr double kDefaultRidge = 1e-8;

// argmin_c ||x - W_S c||^2 + ridge ||c||^2 over the columns listed in support.
std::vector<float> restricted_least_squares(std::span<const float> x, const Matrix& w_dec,
                                            std::span<const std::uint32_t> support,
                                            double ridge = kDefaultRidge);

// Same solve with the selected columns already gathered into rows of `columns`
// (k x d, contiguous). Shared by the encoders.
void solve_gathered(std::span<const float> x, std::span<const float> columns, std::size_t k,
                    double ridge, std::span<double> out);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
float cosine(std::span<const float> a, std::span<const float> b);

// W_dec z + b_pre, touching only the columns present in the code.
std::vector<float> reconstruct(const SparseCode& code, const Dictionary& dict);

}  // namespace dlkit
