#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dlkit/training.hpp"
#include "oracles.hpp"

using namespace dlkit;

namespace {

Matrix random_batch(std::size_t n, std::size_t d, std::mt19937_64& rng, float scale = 1.0f) {
    std::normal_distribution<float> g(0.0f, scale);
    Matrix x(n, d);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
}

// Flattens analytic gradients in the shadow layout.
std::vector<double> flat(const Gradients& g) {
    std::vector<double> out(g.w_dec);
    out.insert(out.end(), g.b_pre.begin(), g.b_pre.end());
    out.insert(out.end(), g.w_enc.begin(), g.w_enc.end());
    return out;
}

// Sparse planted data: x = W z with s positive coefficients.
Matrix planted(const Matrix& w, std::size_t n, std::size_t s, std::mt19937_64& rng) {
    const std::size_t d = w.rows(), m = w.cols();
    Matrix x(n, d);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::uniform_real_distribution<float> coef(0.5f, 1.5f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < s; ++q) {
            const auto f = pick(rng);
            const float c = coef(rng);
            for (std::size_t r = 0; r < d; ++r) x(i, r) += c * w(r, f);
        }
    return x;
}

double max_pairwise_cos(const Matrix& w, const std::vector<std::size_t>& cols) {
    double best = -1.0;
    for (std::size_t a = 0; a < cols.size(); ++a)
        for (std::size_t b = a + 1; b < cols.size(); ++b)
            best = std::max(best, double(cosine(w.col(cols[a]), w.col(cols[b]))));
    return best;
}

}  // namespace

TEST_CASE("enum round trips") {
    CHECK(method_from_string(to_string(Method::topk)) == Method::topk);
    CHECK(method_from_string("icfl") == Method::icfl);
    CHECK_THROWS_AS(method_from_string("omp"), ValidationError);
    CHECK(optimizer_from_string("adam") == OptimizerKind::adam);
    CHECK_THROWS_AS(optimizer_from_string("rmsprop"), ValidationError);
}

TEST_CASE("presets and config validation") {
    const auto paper = TrainConfig::paper_preset(Method::icfl);
    CHECK(paper.lr == doctest::Approx(5e-5));
    CHECK(paper.batch_size == 8192);
    CHECK(paper.steps == 300000);
    CHECK(paper.m == 8192);
    CHECK(paper.icfl.j == 20);
    CHECK(paper.icfl.k == 5);
    CHECK(TrainConfig::paper_preset(Method::topk).topk.big_k == 100);
    CHECK(paper.reset_period == 100);
    CHECK(paper.reset_cosine_threshold == doctest::Approx(0.9));
    CHECK(paper.aux_k == 32);
    CHECK(paper.aux_alpha == doctest::Approx(1.0 / 32.0));

    const auto desk = TrainConfig::desk_preset(Method::topk);
    CHECK(desk.batch_size == 256);
    CHECK(desk.m == 256);

    auto bad = desk;
    bad.lr = 0.0f;
    CHECK_THROWS_AS(bad.validate(64), ValidationError);
    bad = desk;
    bad.reset_cosine_threshold = 1.5f;
    CHECK_THROWS_AS(bad.validate(64), ValidationError);
    bad = TrainConfig::desk_preset(Method::icfl);
    bad.icfl.k = 100;
    CHECK_THROWS_AS(bad.validate(64), ValidationError);
}

TEST_CASE("init_dictionary") {
    auto a = init_dictionary(64, 256, 5);
    CHECK(a.max_column_norm_error() < 1e-5);
    CHECK(a == init_dictionary(64, 256, 5));
    CHECK_FALSE(a == init_dictionary(64, 256, 6));
    CHECK_FALSE(a.w_enc.has_value());
    for (float b : a.b_pre) CHECK(b == 0.0f);

    // Mean |cos| of independent sphere points is about sqrt(2 / (pi d)) ~ 0.1 for d = 64.
    double sum = 0.0;
    std::size_t pairs = 0;
    const auto cols = a.w_dec.transposed();
    for (std::size_t i = 0; i < 256; ++i)
        for (std::size_t j = i + 1; j < 256; ++j, ++pairs) sum += std::abs(cosine(cols.row(i), cols.row(j)));
    CHECK(sum / double(pairs) < 0.25);

    auto t = init_dictionary(8, 16, 1, true);
    REQUIRE(t.w_enc.has_value());
    CHECK(*t.w_enc == t.w_dec.transposed());
}

TEST_CASE("dead feature tracker") {
    DeadFeatureTracker tr(3, 2, 1e-5);
    std::vector<SparseCode> codes(4, make_code(3, {{0, 1.0f}}));
    tr.track(codes);
    CHECK(tr.tokens_seen() == 4);
    CHECK(tr.dead_features() == std::vector<std::uint32_t>{1, 2});
    // Explicit zeros do not count as activations.
    std::vector<SparseCode> zeros(4, SparseCode{3, {{1, 0.0f}}});
    tr.track(zeros);
    CHECK(tr.dead_features() == std::vector<std::uint32_t>{1, 2});
    // The first step leaves the window.
    tr.track(zeros);
    CHECK(tr.tokens_seen() == 8);
    CHECK(tr.dead_features() == std::vector<std::uint32_t>{0, 1, 2});
    CHECK_THROWS_AS(tr.track(std::vector<SparseCode>{SparseCode{5, {}}}), ValidationError);

    // One activation in 200,000 tokens: 5e-6 < 1e-5.
    DeadFeatureTracker big(2, 1000, 1e-5);
    std::vector<SparseCode> batch(200, make_code(2, {{1, 1.0f}}));
    batch[0] = make_code(2, {{0, 1.0f}, {1, 1.0f}});
    big.track(batch);
    batch[0] = make_code(2, {{1, 1.0f}});
    for (int s = 1; s < 1000; ++s) big.track(batch);
    CHECK(big.tokens_seen() == 200000);
    CHECK(big.activations(0) == 1);
    CHECK(big.dead_features() == std::vector<std::uint32_t>{0});
    CHECK(big.activations(1) <= big.tokens_seen());
}

TEST_CASE("icfl_step leaves an exactly reconstructed batch unchanged") {
    Dictionary dict{Matrix::identity(3), {0, 0, 0}, std::nullopt};
    auto batch = Matrix::from_rows({{2, 0, 0}, {0, 1, 0}, {0, 0, 3}});
    Optimizer opt(OptimizerKind::sgd, 0.5);
    const auto before = dict;
    const auto res = icfl_step(batch, dict, IcflConfig{1, 1}, opt);
    CHECK(res.metrics.loss < 1e-12);
    CHECK(dict == before);
}

TEST_CASE("icfl gradients match finite differences") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 2 + rng() % 5, m = d + rng() % 6, n = 1 + rng() % 5;
        Dictionary dict = init_dictionary(d, m, rng());
        dict.b_pre = random_batch(1, d, rng, 0.1f).values();
        const auto x = random_batch(n, d, rng);
        const auto codes = icfl_encode_batch(x, dict, IcflConfig{1, 1});
        Gradients g;
        icfl_gradients(x, dict, codes, g);
        const auto fd = oracle::central_difference(oracle::shadow_of(dict),
                                                   [&](const oracle::Shadow& s) { return oracle::icfl_loss(s, x, codes); });
        CHECK(oracle::rel_error(flat(g), fd) < 1e-3);
    }
}

TEST_CASE("icfl codes are data: perturbed codes change the update per the formula") {
    std::mt19937_64 rng(3);
    Dictionary dict = init_dictionary(4, 6, 1);
    const auto x = random_batch(3, 4, rng);
    auto codes = icfl_encode_batch(x, dict, IcflConfig{2, 1});
    for (auto& c : codes)
        for (auto& e : c.entries) e.value *= 1.7f;
    Gradients g;
    icfl_gradients(x, dict, codes, g);
    // dW[:, j] = (-2/b) sum_i e_i z_ij with e computed from the perturbed codes.
    std::vector<double> ref(4 * 6, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto xhat = reconstruct(codes[i], dict);
        for (const auto& e : codes[i].entries)
            for (std::size_t r = 0; r < 4; ++r)
                ref[r * 6 + e.index] += -2.0 / 3.0 * (double(x(i, r)) - xhat[r]) * e.value;
    }
    for (std::size_t q = 0; q < ref.size(); ++q) CHECK(g.w_dec[q] == doctest::Approx(ref[q]).epsilon(1e-5));
}

TEST_CASE("single sample single feature gradient in 2-D") {
    Dictionary dict{Matrix::from_rows({{0.6f}, {0.8f}}), {0.1f, -0.2f}, std::nullopt};
    auto x = Matrix::from_rows({{1.0f, 0.5f}});
    std::vector<SparseCode> codes{make_code(1, {{0, 0.9f}})};
    Gradients g;
    icfl_gradients(x, dict, codes, g);
    const auto fd = oracle::central_difference(oracle::shadow_of(dict),
                                               [&](const oracle::Shadow& s) { return oracle::icfl_loss(s, x, codes); });
    CHECK(oracle::rel_error(flat(g), fd) < 1e-3);
}

TEST_CASE("topk gradients match finite differences") {
    std::mt19937_64 rng(77);
    int checked = 0;
    for (int attempt = 0; checked < 100 && attempt < 10000; ++attempt) {
        const std::size_t d = 3 + rng() % 3, m = 4 + rng() % 5, n = 1 + rng() % 3;
        const std::size_t K = 1 + rng() % 3;
        Dictionary dict = init_dictionary(d, m, rng(), true);
        std::normal_distribution<float> g(0.0f, 1.0f);
        for (std::size_t i = 0; i < dict.w_enc->size(); ++i) dict.w_enc->data()[i] = g(rng);
        dict.b_pre = random_batch(1, d, rng, 0.1f).values();
        const auto x = random_batch(n, d, rng);
        std::vector<std::uint32_t> dead;
        for (std::uint32_t f = 0; f < m; ++f)
            if (rng() % 2) dead.push_back(f);
        const AuxConfig aux{2, 0.25};
        auto sh = oracle::shadow_of(dict);
        const auto pat = oracle::topk_pattern(sh, x, K, dead, aux.aux_k);
        // Skip instances where h = 1e-3 could flip a selection or a ReLU.
        if (pat.margin < 0.05) continue;
        Gradients grad;
        topk_gradients(x, dict, TopkConfig{K}, dead, aux, grad);
        const auto fd = oracle::central_difference(
            sh, [&](const oracle::Shadow& s) { return oracle::topk_loss(s, x, pat, aux.aux_alpha); });
        CHECK(oracle::rel_error(flat(grad), fd) < 1e-3);
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("topk aux term vanishes without dead features") {
    std::mt19937_64 rng(8);
    Dictionary dict = init_dictionary(3, 4, 2, true);
    const auto x = random_batch(5, 3, rng);
    Gradients with, without;
    const auto m1 = topk_gradients(x, dict, TopkConfig{2}, {}, AuxConfig{2, 1.0}, with);
    const auto m2 = topk_gradients(x, dict, TopkConfig{2}, {}, AuxConfig{2, 0.0}, without);
    CHECK(m1.aux_loss == 0.0);
    CHECK(m1.aux_features == 0);
    CHECK(flat(with) == flat(without));
    CHECK(m1.loss == m2.loss);
}

TEST_CASE("divergence is reported") {
    Dictionary dict = init_dictionary(3, 4, 2);
    Gradients g = Gradients::zeros_like(dict);
    g.w_dec[0] = std::numeric_limits<double>::quiet_NaN();
    Optimizer opt(OptimizerKind::sgd, 0.1);
    CHECK_THROWS_WITH_AS(opt.apply(dict, g), "divergence", DivergenceError);
}

TEST_CASE("steps keep decoder columns unit norm and reduce the loss") {
    for (Method method : {Method::icfl, Method::topk}) {
        std::mt19937_64 rng(123);
        const auto truth = oracle::random_unit_columns(16, 32, rng);
        const auto batch = planted(truth, 128, 3, rng);
        Dictionary dict = init_dictionary(16, 32, 9, method == Method::topk);
        Optimizer opt(OptimizerKind::sgd, 0.05);
        std::vector<double> losses;
        for (int step = 0; step < 100; ++step) {
            const auto res = method == Method::icfl ? icfl_step(batch, dict, IcflConfig{3, 1}, opt)
                                                    : topk_step(batch, dict, TopkConfig{3}, {}, AuxConfig{}, opt);
            losses.push_back(res.metrics.loss);
            CHECK(dict.max_column_norm_error() < 1e-5);
        }
        double first = 0, last = 0;
        for (int i = 0; i < 10; ++i) {
            first += losses[std::size_t(i)];
            last += losses[losses.size() - 1 - std::size_t(i)];
        }
        CHECK(last < first);
        // Smoothed curve trends downward: each 20-step block mean below the first block.
        for (std::size_t b = 1; b < 5; ++b) {
            double block = 0, head = 0;
            for (std::size_t i = 0; i < 20; ++i) {
                block += losses[b * 20 + i];
                head += losses[i];
            }
            CHECK(block < head);
        }
    }
}

TEST_CASE("random_reset") {
    std::mt19937_64 rng(1);
    Dictionary eye{Matrix::identity(4), {0, 0, 0, 0}, std::nullopt};
    CHECK(random_reset(eye, 0.9, rng) == 0);
    CHECK(eye.w_dec == Matrix::identity(4));

    Dictionary two{Matrix::from_rows({{1, 1, 0}, {0, 0, 1}, {0, 0, 0}}), {0, 0, 0}, std::nullopt};
    CHECK(random_reset(two, 0.9, rng) == 1);
    CHECK(two.w_dec.col(0) == std::vector<float>{1, 0, 0});
    CHECK(two.w_dec.col(2) == std::vector<float>{0, 1, 0});
    CHECK(std::abs(norm(two.w_dec.col(1)) - 1.0) < 1e-5);

    Dictionary three{Matrix::from_rows({{1, 1, 1}, {0, 0, 0}}), {0, 0}, Matrix(3, 2, 0.5f)};
    CHECK(random_reset(three, 0.9, rng) == 2);
    CHECK(three.w_dec.col(0) == std::vector<float>{1, 0});
    // Encoder rows follow their redrawn columns.
    CHECK((*three.w_enc)(0, 0) == 0.5f);
    CHECK((*three.w_enc)(1, 0) == three.w_dec(0, 1));
    CHECK((*three.w_enc)(2, 1) == three.w_dec(1, 2));
}

TEST_CASE("random_reset survivors are pairwise below the threshold") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        // Clusters of near-duplicates.
        Dictionary dict = init_dictionary(6, 24, rng());
        std::normal_distribution<float> g(0.0f, 0.1f);
        for (std::size_t c = 8; c < 24; ++c) {
            auto v = dict.w_dec.col(c % 8);
            for (auto& x : v) x += g(rng);
            dict.w_dec.set_col(c, v);
        }
        dict.normalize_columns();
        const auto snapshot = dict.w_dec;
        const double before = [&] {
            std::vector<std::size_t> all(24);
            std::iota(all.begin(), all.end(), std::size_t(0));
            return max_pairwise_cos(snapshot, all);
        }();
        random_reset(dict, 0.9, rng);
        std::vector<std::size_t> survivors;
        for (std::size_t c = 0; c < 24; ++c)
            if (dict.w_dec.col(c) == snapshot.col(c)) survivors.push_back(c);
        const double after = max_pairwise_cos(snapshot, survivors);
        CHECK(after <= before);
        CHECK(after <= 0.9 + 1e-6);
    }
}

TEST_CASE("train: zero steps, determinism, logging") {
    std::mt19937_64 rng(10);
    const auto truth = oracle::random_unit_columns(12, 24, rng);
    const auto data = planted(truth, 300, 3, rng);
    auto cfg = TrainConfig::desk_preset(Method::icfl);
    cfg.m = 32;
    cfg.batch_size = 64;
    cfg.icfl = IcflConfig{3, 1};
    cfg.steps = 0;
    const auto zero = train(data, cfg);
    CHECK(zero.dict == init_dictionary(12, 32, cfg.seed));
    CHECK(zero.log.empty());

    cfg.steps = 250;
    cfg.log_every = 100;
    cfg.checkpoint_every = 100;
    std::vector<std::size_t> ckpts;
    TrainCallbacks cb;
    cb.on_checkpoint = [&](std::size_t step, const Dictionary&) { ckpts.push_back(step); };
    const auto a = train(data, cfg, cb);
    const auto b = train(data, cfg);
    CHECK(a.dict == b.dict);
    CHECK(ckpts == std::vector<std::size_t>{100, 200});
    REQUIRE(a.log.size() == 3);
    CHECK(a.log[0].step == 100);
    CHECK(a.log[2].step == 250);
    CHECK(a.log[2].loss < a.log[0].loss);

    auto topk = cfg;
    topk.method = Method::topk;
    topk.topk = TopkConfig{3};
    const auto t1 = train(data, topk), t2 = train(data, topk);
    CHECK(t1.dict == t2.dict);
    REQUIRE(t1.dict.w_enc.has_value());
}

TEST_CASE("train on a dataset requires preprocessing") {
    LabeledDataset ds;
    ds.x = Matrix(4, 3, 1.0f);
    ds.labels = {0, 0, 1, kControlLabel};
    ds.groups = {0, 1, 2, 3};
    ds.is_control = {0, 0, 0, 1};
    CHECK_THROWS_AS(train(ds, TrainConfig::desk_preset(Method::icfl)), ValidationError);
}
