#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dlkit/core.hpp"

using namespace dlkit;

namespace {

std::vector<std::uint32_t> sort_oracle(const std::vector<float>& v, std::size_t k) {
    std::vector<std::uint32_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
    idx.resize(std::min(k, v.size()));
    return idx;
}

std::vector<std::uint32_t> sorted(std::vector<std::uint32_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

}  // namespace

TEST_CASE("matrix construction and shape checks") {
    Matrix m(2, 3, 1.5f);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 1.5f);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<float>{1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ValidationError);

    auto t = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}}).transposed();
    CHECK(t.rows() == 3);
    CHECK(t(2, 1) == 6.0f);
    CHECK(Matrix::identity(3)(1, 1) == 1.0f);
    CHECK(Matrix::identity(3)(0, 1) == 0.0f);

    Matrix bad(1, 2);
    bad(0, 1) = std::nanf("");
    CHECK_FALSE(bad.all_finite());
}

TEST_CASE("select_rows keeps order") {
    auto m = Matrix::from_rows({{0}, {1}, {2}, {3}});
    std::vector<std::size_t> idx{3, 0, 3};
    auto s = m.select_rows(idx);
    CHECK(s.rows() == 3);
    CHECK(s(0, 0) == 3.0f);
    CHECK(s(1, 0) == 0.0f);
    CHECK(s(2, 0) == 3.0f);
}

TEST_CASE("topk_select examples") {
    std::vector<float> a{3, 1, 2};
    CHECK(sorted(topk_select(a, 2)) == std::vector<std::uint32_t>{0, 2});
    std::vector<float> b{5, 5, 1};
    CHECK(topk_select(b, 1) == std::vector<std::uint32_t>{0});
    std::vector<float> c{-1, -3, -2};
    CHECK(sorted(topk_select(c, 2)) == std::vector<std::uint32_t>{0, 2});
    CHECK(topk_select(a, 10).size() == 3);
    CHECK_THROWS_WITH_AS(topk_select(std::vector<float>{}, 1), "empty input", ValidationError);
    CHECK_THROWS_AS(topk_select(a, 0), ValidationError);
}

TEST_CASE("topk_select equals a stable descending sort") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng() % 64, k = 1 + rng() % 70;
        std::vector<float> v(n);
        // Small integer values force plenty of ties.
        for (auto& x : v) x = float(int(rng() % 9) - 4);
        CHECK(topk_select(v, k) == sort_oracle(v, k));
    }
}

TEST_CASE("restricted least squares examples") {
    auto eye = Matrix::identity(2);
    std::vector<float> x{1, 0};
    std::vector<std::uint32_t> both{0, 1};
    auto c = restricted_least_squares(x, eye, both);
    CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(c[1]) < 1e-6);

    Matrix w(2, 1);
    w(0, 0) = w(1, 0) = float(std::sqrt(0.5));
    std::vector<float> ones{1, 1};
    std::vector<std::uint32_t> first{0};
    const double wn = double(w(0, 0)) * w(0, 0) * 2.0;
    const double oracle = (2.0 * double(w(0, 0))) / (wn + kDefaultRidge);
    CHECK(restricted_least_squares(ones, w, first)[0] == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(restricted_least_squares(ones, w, first)[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-5));

    std::vector<float> zero{0, 0, 0};
    auto w3 = Matrix::identity(3);
    for (float v : restricted_least_squares(zero, w3, std::vector<std::uint32_t>{0, 2})) CHECK(v == 0.0f);
}

TEST_CASE("restricted least squares errors") {
    auto w = Matrix::identity(2);
    std::vector<float> x{1, 0};
    CHECK_THROWS_AS(restricted_least_squares(x, w, std::vector<std::uint32_t>{1, 1}), ValidationError);
    CHECK_THROWS_AS(restricted_least_squares(x, w, std::vector<std::uint32_t>{2}), ValidationError);
    Matrix wide(2, 3, 1.0f);
    CHECK_THROWS_WITH_AS(restricted_least_squares(x, wide, std::vector<std::uint32_t>{0, 1, 2}),
                         "overdetermined support", ValidationError);
}

TEST_CASE("restricted least squares matches a pseudo-inverse") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 3 + rng() % 10, m = d + rng() % 8, k = 1 + rng() % std::min<std::size_t>(d, 5);
        auto w = random_matrix(d, m, rng);
        auto xm = random_matrix(1, d, rng);
        std::vector<std::uint32_t> all(m);
        std::iota(all.begin(), all.end(), 0u);
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<std::uint32_t> support(all.begin(), all.begin() + std::ptrdiff_t(k));

        Eigen::MatrixXd ws(d, k);
        Eigen::VectorXd xv(d);
        for (std::size_t r = 0; r < d; ++r) {
            xv[Eigen::Index(r)] = xm(0, r);
            for (std::size_t j = 0; j < k; ++j) ws(Eigen::Index(r), Eigen::Index(j)) = w(r, support[j]);
        }
        const Eigen::VectorXd ref = ws.completeOrthogonalDecomposition().pseudoInverse() * xv;
        const auto c = restricted_least_squares(xm.row(0), w, support, 0.0);
        double num = 0, den = 0;
        for (std::size_t j = 0; j < k; ++j) {
            num += (c[j] - ref[Eigen::Index(j)]) * (c[j] - ref[Eigen::Index(j)]);
            den += ref[Eigen::Index(j)] * ref[Eigen::Index(j)];
        }
        CHECK(std::sqrt(num / std::max(den, 1e-30)) < 1e-4);

        // Residual never exceeds the target norm.
        std::vector<double> res(xm.row(0).begin(), xm.row(0).end());
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t r = 0; r < d; ++r) res[r] -= double(w(r, support[j])) * c[j];
        double rn = 0;
        for (double v : res) rn += v * v;
        CHECK(std::sqrt(rn) <= norm(xm.row(0)) + 1e-5);
    }
}

TEST_CASE("cosine") {
    std::vector<float> a{1, 2, 3};
    CHECK(cosine(a, a) == doctest::Approx(1.0));
    std::vector<float> e1{1, 0}, e2{0, 1}, m1{-1, 0}, z{0, 0};
    CHECK(cosine(e1, e2) == 0.0f);
    CHECK(cosine(e1, m1) == doctest::Approx(-1.0));
    CHECK(cosine(e1, z) == 0.0f);
    CHECK_THROWS_AS(cosine(a, e1), ValidationError);

    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        auto m = random_matrix(2, 16, rng);
        std::vector<float> scaled(m.row(0).begin(), m.row(0).end());
        for (auto& v : scaled) v *= 3.7f;
        CHECK(cosine(m.row(0), m.row(1)) == doctest::Approx(cosine(m.row(1), m.row(0))).epsilon(1e-6));
        CHECK(std::abs(cosine(scaled, m.row(1)) - cosine(m.row(0), m.row(1))) < 1e-6);
        const float c = cosine(m.row(0), m.row(1));
        CHECK(c >= -1.0f);
        CHECK(c <= 1.0f);
    }
}

TEST_CASE("make_code sorts and merges") {
    auto c = make_code(5, {{3, 1.0f}, {1, 2.0f}, {3, 0.5f}});
    REQUIRE(c.nnz() == 2);
    CHECK(c.entries[0] == SparseEntry{1, 2.0f});
    CHECK(c.entries[1] == SparseEntry{3, 1.5f});
    CHECK_NOTHROW(c.validate());
    CHECK(c.dense() == std::vector<float>{0, 2, 0, 1.5f, 0});

    SparseCode bad{4, {{2, 1.0f}, {1, 1.0f}}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    SparseCode out{2, {{2, 1.0f}}};
    CHECK_THROWS_AS(out.validate(), ValidationError);
    CHECK_THROWS_AS(make_code(2, {{5, 1.0f}}), ValidationError);
}

TEST_CASE("reconstruct examples") {
    Dictionary dict{Matrix::from_rows({{1, 0, 0}, {0, 1, 0}}), {0, 0}, std::nullopt};
    CHECK(reconstruct(SparseCode{3, {}}, dict) == std::vector<float>{0, 0});
    CHECK(reconstruct(make_code(3, {{1, 1.0f}}), dict) == dict.w_dec.col(1));
    dict.b_pre = {1, 1};
    CHECK(reconstruct(make_code(3, {{0, 2.0f}, {1, -1.0f}}), dict) == std::vector<float>{3, 0});
    CHECK_THROWS_AS(reconstruct(SparseCode{4, {}}, dict), ValidationError);
}

TEST_CASE("reconstruct equals the dense product") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 1 + rng() % 12, m = 1 + rng() % 30;
        Dictionary dict{random_matrix(d, m, rng), random_matrix(1, d, rng).values(), std::nullopt};
        std::vector<SparseEntry> entries;
        std::normal_distribution<float> g;
        for (std::uint32_t j = 0; j < m; ++j)
            if (rng() % 3 == 0) entries.push_back({j, g(rng)});
        const auto code = make_code(std::uint32_t(m), entries);
        const auto z = code.dense();
        const auto got = reconstruct(code, dict);
        for (std::size_t r = 0; r < d; ++r) {
            double ref = dict.b_pre[r];
            for (std::size_t j = 0; j < m; ++j) ref += double(dict.w_dec(r, j)) * z[j];
            CHECK(std::abs(got[r] - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
        }
    }
}

TEST_CASE("dictionary normalization and validation") {
    Dictionary dict{Matrix::from_rows({{3, 0}, {4, 2}}), {0, 0}, std::nullopt};
    CHECK(dict.max_column_norm_error() == doctest::Approx(4.0));
    dict.normalize_columns();
    CHECK(dict.max_column_norm_error() < 1e-6);
    CHECK(dict.w_dec(0, 0) == doctest::Approx(0.6));
    CHECK_NOTHROW(dict.validate());
    dict.b_pre = {0};
    CHECK_THROWS_AS(dict.validate(), ValidationError);
    dict.b_pre = {0, 0};
    dict.w_enc = Matrix(3, 2);
    CHECK_THROWS_AS(dict.validate(), ValidationError);
}
