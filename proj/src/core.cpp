#include "dlkit/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dlkit {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw ValidationError("matrix data length " + std::to_string(data_.size()) +
                              " does not match shape " + std::to_string(rows_) + "x" +
                              std::to_string(cols_));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw ValidationError("ragged rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

std::vector<float> Matrix::col(std::size_t c) const {
    std::vector<float> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = data_[r * cols_ + c];
    return out;
}

void Matrix::set_col(std::size_t c, std::span<const float> v) {
    if (v.size() != rows_) throw ValidationError("column length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) data_[r * cols_ + c] = v[r];
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t.data_[c * rows_ + r] = data_[r * cols_ + c];
    return t;
}

Matrix Matrix::select_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows_) throw ValidationError("row index out of range");
        std::copy_n(data_.data() + idx[i] * cols_, cols_, out.data_.data() + i * cols_);
    }
    return out;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::vector<float> SparseCode::dense() const {
    std::vector<float> out(dim, 0.0f);
    for (const auto& e : entries) out[e.index] = e.value;
    return out;
}

void SparseCode::validate() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].index >= dim) throw ValidationError("code index out of range");
        if (i > 0 && entries[i].index <= entries[i - 1].index)
            throw ValidationError("code indices not strictly increasing");
    }
}

SparseCode make_code(std::uint32_t dim, std::vector<SparseEntry> entries) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const SparseEntry& a, const SparseEntry& b) { return a.index < b.index; });
    SparseCode code{dim, {}};
    code.entries.reserve(entries.size());
    for (const auto& e : entries) {
        if (e.index >= dim) throw ValidationError("code index out of range");
        if (!code.entries.empty() && code.entries.back().index == e.index)
            code.entries.back().value += e.value;
        else
            code.entries.push_back(e);
    }
    return code;
}

double Dictionary::max_column_norm_error() const {
    std::vector<double> sq(m(), 0.0);
    for (std::size_t r = 0; r < d(); ++r) {
        auto row = w_dec.row(r);
        for (std::size_t c = 0; c < m(); ++c) sq[c] += double(row[c]) * double(row[c]);
    }
    double worst = 0.0;
    for (double s : sq) worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
    return worst;
}

void Dictionary::normalize_columns() {
    std::vector<double> sq(m(), 0.0);
    for (std::size_t r = 0; r < d(); ++r) {
        auto row = w_dec.row(r);
        for (std::size_t c = 0; c < m(); ++c) sq[c] += double(row[c]) * double(row[c]);
    }
    std::vector<double> inv(m());
    for (std::size_t c = 0; c < m(); ++c) inv[c] = sq[c] > 0.0 ? 1.0 / std::sqrt(sq[c]) : 0.0;
    for (std::size_t r = 0; r < d(); ++r) {
        auto row = w_dec.row(r);
        for (std::size_t c = 0; c < m(); ++c) row[c] = float(double(row[c]) * inv[c]);
    }
}

void Dictionary::validate() const {
    if (d() == 0 || m() == 0) throw ValidationError("dictionary must have d, m > 0");
    if (b_pre.size() != d()) throw ValidationError("b_pre length does not match d");
    if (w_enc && (w_enc->rows() != m() || w_enc->cols() != d()))
        throw ValidationError("w_enc must be m x d");
}

namespace {

template <typename T>
std::vector<std::uint32_t> topk_impl(std::span<const T> v, std::size_t k) {
    if (v.empty()) throw ValidationError("empty input");
    if (k == 0) throw ValidationError("topk_select requires K >= 1");
    k = std::min(k, v.size());
    std::vector<std::uint32_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0u);
    auto greater = [&](std::uint32_t a, std::uint32_t b) {
        return v[a] > v[b] || (v[a] == v[b] && a < b);
    };
    if (k < v.size()) {
        std::nth_element(idx.begin(), idx.begin() + std::ptrdiff_t(k), idx.end(), greater);
        idx.resize(k);
    }
    std::sort(idx.begin(), idx.end(), greater);
    return idx;
}

// In-place Cholesky of a k x k SPD matrix (row-major, lower triangle used).
bool cholesky(std::vector<double>& a, std::size_t k) {
    for (std::size_t j = 0; j < k; ++j) {
        double s = a[j * k + j];
        for (std::size_t p = 0; p < j; ++p) s -= a[j * k + p] * a[j * k + p];
        if (!(s > 0.0)) return false;
        const double l = std::sqrt(s);
        a[j * k + j] = l;
        for (std::size_t i = j + 1; i < k; ++i) {
            double t = a[i * k + j];
            for (std::size_t p = 0; p < j; ++p) t -= a[i * k + p] * a[j * k + p];
            a[i * k + j] = t / l;
        }
    }
    return true;
}

}  // namespace

std::vector<std::uint32_t> topk_select(std::span<const float> v, std::size_t k) {
    return topk_impl(v, k);
}

std::vector<std::uint32_t> topk_select(std::span<const double> v, std::size_t k) {
    return topk_impl(v, k);
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ValidationError("length mismatch");
    // Four fixed lanes: deterministic and vectorizable.
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        for (std::size_t l = 0; l < 4; ++l) acc[l] += double(a[i + l]) * double(b[i + l]);
    for (; i < n; ++i) acc[0] += double(a[i]) * double(b[i]);
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

float cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ValidationError("length mismatch");
    const double na = norm(a), nb = norm(b);
    if (na < 1e-12 || nb < 1e-12) return 0.0f;
    const double c = dot(a, b) / (na * nb);
    return float(std::clamp(c, -1.0, 1.0));
}

void solve_gathered(std::span<const float> x, std::span<const float> columns, std::size_t k,
                    double ridge, std::span<double> out) {
    const std::size_t d = x.size();
    if (columns.size() != k * d || out.size() != k) throw ValidationError("solve shape mismatch");
    std::vector<double> gram(k * k);
    for (std::size_t i = 0; i < k; ++i) {
        auto ci = columns.subspan(i * d, d);
        out[i] = dot(ci, x);
        for (std::size_t j = 0; j <= i; ++j) {
            const double g = dot(ci, columns.subspan(j * d, d));
            gram[i * k + j] = g;
            gram[j * k + i] = g;
        }
        gram[i * k + i] += ridge;
    }
    if (!cholesky(gram, k)) {
        // Exactly singular with ridge 0 (repeated or zero column): retry with the default ridge.
        for (std::size_t i = 0; i < k; ++i) {
            auto ci = columns.subspan(i * d, d);
            for (std::size_t j = 0; j <= i; ++j) {
                const double g = dot(ci, columns.subspan(j * d, d));
                gram[i * k + j] = g;
                gram[j * k + i] = g;
            }
            gram[i * k + i] += std::max(ridge, kDefaultRidge);
        }
        if (!cholesky(gram, k)) throw DivergenceError("restricted least squares is singular");
    }
    // Forward then backward substitution with L and L^T.
    for (std::size_t i = 0; i < k; ++i) {
        double s = out[i];
        for (std::size_t p = 0; p < i; ++p) s -= gram[i * k + p] * out[p];
        out[i] = s / gram[i * k + i];
    }
    for (std::size_t ii = k; ii-- > 0;) {
        double s = out[ii];
        for (std::size_t p = ii + 1; p < k; ++p) s -= gram[p * k + ii] * out[p];
        out[ii] = s / gram[ii * k + ii];
    }
}

std::vector<float> restricted_least_squares(std::span<const float> x, const Matrix& w_dec,
                                            std::span<const std::uint32_t> support, double ridge) {
    const std::size_t d = w_dec.rows(), m = w_dec.cols(), k = support.size();
    if (x.size() != d) throw ValidationError("target length does not match dictionary rows");
    if (k > d) throw ValidationError("overdetermined support");
    std::vector<std::uint32_t> sorted(support.begin(), support.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("duplicate support indices");
    if (!sorted.empty() && sorted.back() >= m) throw ValidationError("support index out of range");
    if (k == 0) return {};

    std::vector<float> gathered(k * d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t r = 0; r < d; ++r) gathered[i * d + r] = w_dec(r, support[i]);
    std::vector<double> coef(k);
    solve_gathered(x, gathered, k, ridge, coef);
    return {coef.begin(), coef.end()};
}

std::vector<float> reconstruct(const SparseCode& code, const Dictionary& dict) {
    if (code.dim != dict.m()) throw ValidationError("code dim does not match dictionary");
    const std::size_t d = dict.d();
    std::vector<double> acc(d);
    for (std::size_t r = 0; r < d; ++r) acc[r] = dict.b_pre[r];
    for (const auto& e : code.entries) {
        if (e.index >= dict.m()) throw ValidationError("code index out of range");
        for (std::size_t r = 0; r < d; ++r) acc[r] += double(dict.w_dec(r, e.index)) * e.value;
    }
    return {acc.begin(), acc.end()};
}

}  // namespace dlkit
