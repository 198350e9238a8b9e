#include "dlkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dlkit/io.hpp"
#include "dlkit/parallel.hpp"

namespace dlkit {

std::string to_string(Method m) { return m == Method::icfl ? "icfl" : "topk"; }

Method method_from_string(const std::string& s) {
    if (s == "icfl") return Method::icfl;
    if (s == "topk") return Method::topk;
    throw ValidationError("unknown method '" + s + "' (expected icfl or topk)");
}

std::string to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ValidationError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

TrainConfig TrainConfig::paper_preset(Method method) {
    TrainConfig c;
    c.method = method;
    c.lr = 5e-5f;
    c.batch_size = 8192;
    c.steps = 300000;
    c.m = 8192;
    c.icfl.k = 5;
    c.icfl.j = 20;
    c.topk.big_k = 100;
    return c;
}

TrainConfig TrainConfig::desk_preset(Method method) {
    TrainConfig c;
    c.method = method;
    c.lr = 0.5f;
    c.bias_lr_scale = 0.1f;
    c.batch_size = 256;
    c.steps = 20000;
    c.m = 256;
    c.icfl.k = 5;
    c.icfl.j = 2;
    c.topk.big_k = 10;
    return c;
}

void TrainConfig::validate(std::size_t d) const {
    if (!(lr > 0.0f) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
    if (!(reset_cosine_threshold > 0.0f && reset_cosine_threshold <= 1.0f))
        throw ValidationError("reset_cosine_threshold must lie in (0, 1]");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (m == 0 || d == 0) throw ValidationError("d and m must be positive");
    if (method == Method::icfl)
        icfl.validate(m, d);
    else
        topk.validate(m);
    if (aux_alpha < 0.0f) throw ValidationError("aux_alpha must be non-negative");
    if (!(bias_lr_scale >= 0.0f)) throw ValidationError("bias_lr_scale must be non-negative");
    if (dead_window == 0) throw ValidationError("dead_window must be positive");
    if (log_every == 0) throw ValidationError("log_every must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"schema_version", 1},
            {"method", to_string(method)},
            {"lr", lr},
            {"batch_size", batch_size},
            {"steps", steps},
            {"m", m},
            {"k", icfl.k},
            {"j", icfl.j},
            {"abs_selection", icfl.abs_selection},
            {"ridge", icfl.ridge},
            {"big_k", topk.big_k},
            {"reset_period", reset_period},
            {"reset_cosine_threshold", reset_cosine_threshold},
            {"topk_resets", topk_resets},
            {"aux_k", aux_k},
            {"aux_alpha", aux_alpha},
            {"optimizer", to_string(optimizer)},
            {"bias_lr_scale", bias_lr_scale},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"dead_window", dead_window},
            {"dead_threshold", dead_threshold},
            {"log_every", log_every},
            {"checkpoint_every", checkpoint_every},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    if (j.value("schema_version", 0) != 1) throw ValidationError("train config needs schema_version 1");
    TrainConfig c = base;
    const auto known = c.to_json();
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw ValidationError("unknown train config key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
        if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
        get("lr", c.lr);
        get("batch_size", c.batch_size);
        get("steps", c.steps);
        get("m", c.m);
        get("k", c.icfl.k);
        get("j", c.icfl.j);
        get("abs_selection", c.icfl.abs_selection);
        get("ridge", c.icfl.ridge);
        get("big_k", c.topk.big_k);
        get("reset_period", c.reset_period);
        get("reset_cosine_threshold", c.reset_cosine_threshold);
        get("topk_resets", c.topk_resets);
        get("aux_k", c.aux_k);
        get("aux_alpha", c.aux_alpha);
        get("bias_lr_scale", c.bias_lr_scale);
        get("adam_beta1", c.adam_beta1);
        get("adam_beta2", c.adam_beta2);
        get("adam_eps", c.adam_eps);
        get("dead_window", c.dead_window);
        get("dead_threshold", c.dead_threshold);
        get("log_every", c.log_every);
        get("checkpoint_every", c.checkpoint_every);
        get("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad train config: ") + e.what());
    }
    return c;
}

void save_dictionary(const std::filesystem::path& path, const Dictionary& dict, const nlohmann::json& header) {
    dict.validate();
    io::Container c;
    c.header = header;
    c.header["kind"] = "dictionary";
    c.sections.emplace("w_dec", dict.w_dec);
    c.sections.emplace("b_pre", Matrix(1, dict.d(), dict.b_pre));
    if (dict.w_enc) c.sections.emplace("w_enc", *dict.w_enc);
    io::save_container(path, c);
}

Dictionary load_dictionary(const std::filesystem::path& path, nlohmann::json* header) {
    io::Container c = io::load_container(path);
    if (c.header.value("kind", "") != "dictionary") throw ValidationError(path.string() + " is not a dictionary");
    auto w = c.sections.find("w_dec"), b = c.sections.find("b_pre");
    if (w == c.sections.end() || b == c.sections.end())
        throw ValidationError(path.string() + ": dictionary lacks w_dec or b_pre");
    Dictionary dict{std::move(w->second), b->second.values(), std::nullopt};
    if (auto e = c.sections.find("w_enc"); e != c.sections.end()) dict.w_enc = std::move(e->second);
    dict.validate();
    if (header) *header = std::move(c.header);
    return dict;
}

nlohmann::json to_json(const LogEntry& e) {
    return {{"step", e.step},           {"loss", e.loss},   {"recon_cosine", e.recon_cosine},
            {"dead_count", e.dead_count}, {"resets", e.resets}, {"aux_loss", e.aux_loss}};
}

DeadFeatureTracker::DeadFeatureTracker(std::size_t m, std::size_t window, double threshold)
    : window_(window), threshold_(threshold), totals_(m, 0) {
    if (window_ == 0) throw ValidationError("dead-feature window must be positive");
}

void DeadFeatureTracker::track(std::span<const SparseCode> codes) {
    StepCounts step;
    step.tokens = codes.size();
    std::vector<std::uint32_t> hits;
    for (const auto& c : codes) {
        if (c.dim != totals_.size()) throw ValidationError("code dim does not match tracker");
        for (const auto& e : c.entries)
            if (e.value != 0.0f) hits.push_back(e.index);
    }
    std::sort(hits.begin(), hits.end());
    for (std::size_t i = 0; i < hits.size();) {
        std::size_t j = i;
        while (j < hits.size() && hits[j] == hits[i]) ++j;
        step.counts.emplace_back(hits[i], std::uint32_t(j - i));
        totals_[hits[i]] += j - i;
        i = j;
    }
    tokens_ += step.tokens;
    steps_.push_back(std::move(step));
    while (steps_.size() > window_) {
        const auto& old = steps_.front();
        for (const auto& [f, n] : old.counts) totals_[f] -= n;
        tokens_ -= old.tokens;
        steps_.pop_front();
    }
}

std::vector<std::uint32_t> DeadFeatureTracker::dead_features() const {
    std::vector<std::uint32_t> dead;
    const double denom = std::max<double>(1.0, double(tokens_));
    for (std::uint32_t f = 0; f < totals_.size(); ++f)
        if (double(totals_[f]) / denom < threshold_) dead.push_back(f);
    return dead;
}

Gradients Gradients::zeros_like(const Dictionary& dict) {
    Gradients g;
    g.w_dec.assign(dict.d() * dict.m(), 0.0);
    g.b_pre.assign(dict.d(), 0.0);
    if (dict.w_enc) g.w_enc.assign(dict.m() * dict.d(), 0.0);
    return g;
}

bool Gradients::all_finite() const {
    auto fin = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return fin(w_dec) && fin(b_pre) && fin(w_enc);
}

namespace {

void zero(Gradients& g, const Dictionary& dict) {
    g.w_dec.assign(dict.d() * dict.m(), 0.0);
    g.b_pre.assign(dict.d(), 0.0);
    if (dict.w_enc)
        g.w_enc.assign(dict.m() * dict.d(), 0.0);
    else
        g.w_enc.clear();
}

double cosine_d(std::span<const float> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * double(a[i]);
        bb += b[i] * b[i];
    }
    if (aa < 1e-24 || bb < 1e-24) return 0.0;
    return ab / std::sqrt(aa * bb);
}

}  // namespace

StepMetrics icfl_gradients(const Matrix& batch, const Dictionary& dict,
                           std::span<const SparseCode> codes, Gradients& grad) {
    const std::size_t n = batch.rows(), d = dict.d(), m = dict.m();
    if (n == 0) throw ValidationError("empty batch");
    if (codes.size() != n) throw ValidationError("codes do not match batch");
    if (batch.cols() != d) throw ValidationError("batch width does not match dictionary");
    zero(grad, dict);
    const double scale = -2.0 / double(n);
    StepMetrics metrics;
    std::vector<double> xhat(d), err(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& code = codes[i];
        if (code.dim != m) throw ValidationError("code dim does not match dictionary");
        auto x = batch.row(i);
        for (std::size_t r = 0; r < d; ++r) xhat[r] = dict.b_pre[r];
        for (const auto& e : code.entries)
            for (std::size_t r = 0; r < d; ++r) xhat[r] += double(dict.w_dec(r, e.index)) * e.value;
        double sq = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            err[r] = double(x[r]) - xhat[r];
            sq += err[r] * err[r];
            grad.b_pre[r] += scale * err[r];
        }
        for (const auto& e : code.entries)
            for (std::size_t r = 0; r < d; ++r) grad.w_dec[r * m + e.index] += scale * err[r] * e.value;
        metrics.loss += sq / double(n);
        metrics.recon_cosine += cosine_d(x, xhat) / double(n);
    }
    return metrics;
}

StepMetrics topk_gradients(const Matrix& batch, const Dictionary& dict, const TopkConfig& cfg,
                           std::span<const std::uint32_t> dead, const AuxConfig& aux,
                           Gradients& grad, std::vector<SparseCode>* codes, unsigned workers) {
    if (!dict.w_enc) throw ValidationError("dictionary has no encoder");
    const std::size_t n = batch.rows(), d = dict.d(), m = dict.m();
    if (n == 0) throw ValidationError("empty batch");
    if (batch.cols() != d) throw ValidationError("batch width does not match dictionary");
    cfg.validate(m);
    const Matrix& w_enc = *dict.w_enc;
    zero(grad, dict);

    // Forward pass: pre-activations are the expensive part and are computed per row.
    std::vector<std::vector<double>> pre(n);
    parallel_for(
        n,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) pre[i] = topk_preactivations(batch.row(i), dict);
        },
        workers);

    const double scale = -2.0 / double(n);
    const double aux_scale = -2.0 * aux.aux_alpha / double(n);
    const bool use_aux = aux.aux_alpha > 0.0 && aux.aux_k > 0 && !dead.empty();
    StepMetrics metrics;
    std::vector<double> xhat(d), err(d), centered(d), g_out(d), eaux(d), raux(d);
    std::vector<double> dead_pre(use_aux ? dead.size() : 0);
    if (codes) codes->assign(n, SparseCode{});

    // Backward for encoder row `f` given dL/da_f.
    auto push_encoder = [&](std::uint32_t f, double da) {
        double* gw = grad.w_enc.data() + std::size_t(f) * d;
        auto we = w_enc.row(f);
        for (std::size_t r = 0; r < d; ++r) {
            gw[r] += da * centered[r];
            grad.b_pre[r] -= da * double(we[r]);
        }
    };

    for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.row(i);
        SparseCode code = topk_from_preactivations(pre[i], cfg.big_k);
        for (std::size_t r = 0; r < d; ++r) {
            centered[r] = double(x[r]) - double(dict.b_pre[r]);
            xhat[r] = dict.b_pre[r];
        }
        for (const auto& e : code.entries)
            for (std::size_t r = 0; r < d; ++r) xhat[r] += double(dict.w_dec(r, e.index)) * e.value;
        double sq = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            err[r] = double(x[r]) - xhat[r];
            sq += err[r] * err[r];
            g_out[r] = scale * err[r];
            grad.b_pre[r] += g_out[r];
        }
        metrics.loss += sq / double(n);
        metrics.recon_cosine += cosine_d(x, xhat) / double(n);

        for (const auto& e : code.entries) {
            double dz = 0.0;
            for (std::size_t r = 0; r < d; ++r) {
                grad.w_dec[r * m + e.index] += g_out[r] * e.value;
                dz += double(dict.w_dec(r, e.index)) * g_out[r];
            }
            push_encoder(e.index, dz);
        }

        if (use_aux) {
            for (std::size_t q = 0; q < dead.size(); ++q) dead_pre[q] = pre[i][dead[q]];
            const auto pick = topk_select(std::span<const double>(dead_pre), aux.aux_k);
            std::fill(eaux.begin(), eaux.end(), 0.0);
            std::vector<std::pair<std::uint32_t, double>> active;
            for (auto q : pick) {
                if (!(dead_pre[q] > 0.0)) continue;
                const std::uint32_t f = dead[q];
                active.emplace_back(f, dead_pre[q]);
                for (std::size_t r = 0; r < d; ++r) eaux[r] += double(dict.w_dec(r, f)) * dead_pre[q];
            }
            double asq = 0.0;
            for (std::size_t r = 0; r < d; ++r) {
                raux[r] = err[r] - eaux[r];
                asq += raux[r] * raux[r];
                raux[r] *= aux_scale; // now dL_aux / d e_aux
            }
            metrics.aux_loss += aux.aux_alpha * asq / double(n);
            metrics.aux_features += active.size();
            for (const auto& [f, a] : active) {
                double da = 0.0;
                for (std::size_t r = 0; r < d; ++r) {
                    grad.w_dec[r * m + f] += raux[r] * a;
                    da += double(dict.w_dec(r, f)) * raux[r];
                }
                push_encoder(f, da);
            }
        }
        if (codes) (*codes)[i] = std::move(code);
    }
    return metrics;
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps, double bias_lr_scale)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), bias_lr_scale_(bias_lr_scale) {
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (!(bias_lr_scale >= 0.0)) throw ValidationError("bias_lr_scale must be non-negative");
}

void Optimizer::apply(Dictionary& dict, const Gradients& grad) {
    if (!grad.all_finite()) throw DivergenceError("divergence");
    ++t_;
    auto sgd = [&](float* p, const std::vector<double>& g, double scale) {
        const double step = lr_ * scale;
        for (std::size_t i = 0; i < g.size(); ++i) p[i] = float(double(p[i]) - step * g[i]);
    };
    auto adam = [&](float* p, const std::vector<double>& g, std::vector<double>& m1, std::vector<double>& m2,
                    double scale) {
        if (m1.size() != g.size()) {
            m1.assign(g.size(), 0.0);
            m2.assign(g.size(), 0.0);
        }
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < g.size(); ++i) {
            m1[i] = beta1_ * m1[i] + (1.0 - beta1_) * g[i];
            m2[i] = beta2_ * m2[i] + (1.0 - beta2_) * g[i] * g[i];
            p[i] = float(double(p[i]) - scale * lr_ * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps_));
        }
    };
    if (kind_ == OptimizerKind::sgd) {
        sgd(dict.w_dec.data(), grad.w_dec, 1.0);
        sgd(dict.b_pre.data(), grad.b_pre, bias_lr_scale_);
        if (dict.w_enc && !grad.w_enc.empty()) sgd(dict.w_enc->data(), grad.w_enc, 1.0);
    } else {
        adam(dict.w_dec.data(), grad.w_dec, m1_.w_dec, m2_.w_dec, 1.0);
        adam(dict.b_pre.data(), grad.b_pre, m1_.b_pre, m2_.b_pre, bias_lr_scale_);
        if (dict.w_enc && !grad.w_enc.empty()) adam(dict.w_enc->data(), grad.w_enc, m1_.w_enc, m2_.w_enc, 1.0);
    }
    if (!dict.w_dec.all_finite()) throw DivergenceError("divergence");
}

StepResult icfl_step(const Matrix& batch, Dictionary& dict, const IcflConfig& cfg, Optimizer& opt,
                     unsigned workers) {
    if (batch.rows() == 0) throw ValidationError("empty batch");
    StepResult res;
    res.codes = IcflEncoder(dict, cfg).encode_batch(batch, workers);
    Gradients grad;
    res.metrics = icfl_gradients(batch, dict, res.codes, grad);
    if (!std::isfinite(res.metrics.loss)) throw DivergenceError("divergence");
    opt.apply(dict, grad);
    dict.normalize_columns();
    return res;
}

StepResult topk_step(const Matrix& batch, Dictionary& dict, const TopkConfig& cfg,
                     std::span<const std::uint32_t> dead, const AuxConfig& aux, Optimizer& opt,
                     unsigned workers) {
    StepResult res;
    Gradients grad;
    res.metrics = topk_gradients(batch, dict, cfg, dead, aux, grad, &res.codes, workers);
    if (!std::isfinite(res.metrics.loss) || !std::isfinite(res.metrics.aux_loss))
        throw DivergenceError("divergence");
    opt.apply(dict, grad);
    dict.normalize_columns();
    return res;
}

std::vector<float> random_unit_vector(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(d);
    double sq = 0.0;
    do {
        sq = 0.0;
        for (auto& x : v) {
            x = gauss(rng);
            sq += x * x;
        }
    } while (sq < 1e-20);
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = float(v[i] * inv);
    return out;
}

Dictionary init_dictionary(std::size_t d, std::size_t m, std::uint64_t seed, bool with_encoder) {
    if (d == 0 || m == 0) throw ValidationError("d and m must be positive");
    std::mt19937_64 rng(seed);
    Dictionary dict;
    dict.w_dec = Matrix(d, m);
    for (std::size_t c = 0; c < m; ++c) dict.w_dec.set_col(c, random_unit_vector(d, rng));
    dict.normalize_columns();
    dict.b_pre.assign(d, 0.0f);
    if (with_encoder) dict.w_enc = dict.w_dec.transposed();
    return dict;
}

std::size_t random_reset(Dictionary& dict, double threshold, std::mt19937_64& rng) {
    const std::size_t m = dict.m(), d = dict.d();
    const Matrix cols = dict.w_dec.transposed();
    std::vector<double> norms(m);
    for (std::size_t c = 0; c < m; ++c) norms[c] = norm(cols.row(c));
    std::vector<bool> replace(m, false);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
            if (replace[b]) continue;
            const double den = norms[a] * norms[b];
            if (den < 1e-24) continue;
            if (dot(cols.row(a), cols.row(b)) / den > threshold) replace[b] = true;
        }
    }
    std::size_t count = 0;
    for (std::size_t c = 0; c < m; ++c) {
        if (!replace[c]) continue;
        const auto v = random_unit_vector(d, rng);
        dict.w_dec.set_col(c, v);
        if (dict.w_enc) std::copy(v.begin(), v.end(), dict.w_enc->row(c).begin());
        ++count;
    }
    return count;
}

TrainResult train(const Matrix& data, const TrainConfig& cfg, const TrainCallbacks& cb) {
    const std::size_t n = data.rows(), d = data.cols();
    if (n == 0) throw ValidationError("empty training set");
    cfg.validate(d);
    const bool topk = cfg.method == Method::topk;

    TrainResult res;
    res.dict = init_dictionary(d, cfg.m, cfg.seed, topk);
    // Separate streams for batch order and resets keep each reproducible on its own.
    std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::mt19937_64 reset_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
    Optimizer opt(cfg.optimizer, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.bias_lr_scale);
    DeadFeatureTracker tracker(cfg.m, cfg.dead_window, cfg.dead_threshold);
    const AuxConfig aux{cfg.aux_k, cfg.aux_alpha};
    const bool resets = cfg.reset_period > 0 && (!topk || cfg.topk_resets);

    const std::size_t bs = std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), order_rng);
    std::size_t cursor = 0;

    LogEntry acc;
    std::size_t acc_steps = 0;
    std::vector<std::uint32_t> dead;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        if (cursor + bs > n) {
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        const Matrix batch = data.select_rows(std::span(order).subspan(cursor, bs));
        cursor += bs;

        StepResult sr;
        if (topk) {
            dead = tracker.dead_features();
            sr = topk_step(batch, res.dict, cfg.topk, dead, aux, opt, cfg.workers);
        } else {
            sr = icfl_step(batch, res.dict, cfg.icfl, opt, cfg.workers);
        }
        tracker.track(sr.codes);
        acc.loss += sr.metrics.loss;
        acc.aux_loss += sr.metrics.aux_loss;
        acc.recon_cosine += sr.metrics.recon_cosine;
        ++acc_steps;

        if (resets && step % cfg.reset_period == 0)
            acc.resets += random_reset(res.dict, cfg.reset_cosine_threshold, reset_rng);

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            LogEntry e;
            e.step = step;
            e.loss = acc.loss / double(acc_steps);
            e.aux_loss = acc.aux_loss / double(acc_steps);
            e.recon_cosine = acc.recon_cosine / double(acc_steps);
            e.dead_count = tracker.dead_count();
            e.resets = acc.resets;
            res.log.push_back(e);
            if (cb.on_log) cb.on_log(e);
            acc = LogEntry{};
            acc_steps = 0;
        }
        if (cb.on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            cb.on_checkpoint(step, res.dict);
    }
    res.final_dead = cfg.steps > 0 ? tracker.dead_features() : std::vector<std::uint32_t>{};
    res.final_dead_count = res.final_dead.size();
    return res;
}

TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg, bool include_controls,
                  const TrainCallbacks& cb) {
    if (!ds.provenance.centered || !ds.provenance.normalized)
        throw ValidationError("training requires a centered and normalized dataset");
    if (include_controls) return train(ds.x, cfg, cb);
    const auto rows = ds.perturbed_rows();
    return train(ds.x.select_rows(rows), cfg, cb);
}

}  // namespace dlkit
