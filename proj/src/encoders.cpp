#include "dlkit/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dlkit/parallel.hpp"

namespace dlkit {

void IcflConfig::validate(std::size_t m, std::size_t d) const {
    if (k < 1 || j < 1) throw ValidationError("ICFL requires k >= 1 and j >= 1");
    if (j * k > m)
        throw ValidationError("ICFL budget j*k=" + std::to_string(j * k) + " exceeds m=" + std::to_string(m));
    if (k > d) throw ValidationError("overdetermined support");
    if (!(ridge >= 0.0)) throw ValidationError("ridge must be non-negative");
}

void TopkConfig::validate(std::size_t m) const {
    if (big_k < 1 || big_k > m) throw ValidationError("TopK requires 1 <= K <= m");
}

void require_unit_norm(const Dictionary& dict, double tol) {
    if (dict.max_column_norm_error() > tol) throw ValidationError("dictionary not unit-norm");
}

IcflEncoder::IcflEncoder(const Dictionary& dict, IcflConfig cfg)
    : dict_(dict), cfg_(cfg), columns_(dict.w_dec.transposed()) {
    dict.validate();
    cfg_.validate(dict.m(), dict.d());
    require_unit_norm(dict);
}

SparseCode IcflEncoder::encode(std::span<const float> x, IcflTrace* trace) const {
    const std::size_t d = dict_.d(), m = dict_.m(), k = cfg_.k;
    if (x.size() != d) throw ValidationError("sample length does not match dictionary");

    std::vector<float> residual(d);
    for (std::size_t r = 0; r < d; ++r) residual[r] = x[r] - dict_.b_pre[r];

    std::vector<double> scores(m);
    std::vector<float> gathered(k * d);
    std::vector<double> coef(k);
    std::vector<double> update(d);
    std::vector<SparseEntry> picked;
    picked.reserve(cfg_.budget());
    if (trace) trace->residual_norms.assign(1, norm(residual));

    for (std::size_t t = 0; t < cfg_.j; ++t) {
        for (std::size_t c = 0; c < m; ++c) {
            const double s = dot(columns_.row(c), residual);
            scores[c] = cfg_.abs_selection ? std::abs(s) : s;
        }
        const auto support = topk_select(std::span<const double>(scores), k);
        for (std::size_t i = 0; i < k; ++i) {
            auto src = columns_.row(support[i]);
            std::copy(src.begin(), src.end(), gathered.begin() + std::ptrdiff_t(i * d));
        }
        solve_gathered(residual, gathered, k, cfg_.ridge, coef);

        std::fill(update.begin(), update.end(), 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            const float* col = gathered.data() + i * d;
            for (std::size_t r = 0; r < d; ++r) update[r] += coef[i] * double(col[r]);
            picked.push_back({support[i], float(coef[i])});
        }
        for (std::size_t r = 0; r < d; ++r) residual[r] = float(double(residual[r]) - update[r]);
        if (trace) trace->residual_norms.push_back(norm(residual));
    }

    SparseCode code = make_code(std::uint32_t(m), std::move(picked));
    std::erase_if(code.entries, [](const SparseEntry& e) { return e.value == 0.0f; });
    return code;
}

std::vector<SparseCode> IcflEncoder::encode_batch(const Matrix& x, unsigned workers) const {
    if (x.cols() != dict_.d()) throw ValidationError("batch width does not match dictionary");
    std::vector<SparseCode> out(x.rows());
    parallel_for(
        x.rows(),
        [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) out[i] = encode(x.row(i));
        },
        workers);
    return out;
}

SparseCode icfl_encode(std::span<const float> x, const Dictionary& dict, const IcflConfig& cfg) {
    return IcflEncoder(dict, cfg).encode(x);
}

std::vector<SparseCode> icfl_encode_batch(const Matrix& x, const Dictionary& dict,
                                          const IcflConfig& cfg, unsigned workers) {
    return IcflEncoder(dict, cfg).encode_batch(x, workers);
}

std::vector<double> topk_preactivations(std::span<const float> x, const Dictionary& dict) {
    if (!dict.w_enc) throw ValidationError("dictionary has no encoder");
    const std::size_t d = dict.d(), m = dict.m();
    if (x.size() != d) throw ValidationError("sample length does not match dictionary");
    std::vector<float> centered(d);
    for (std::size_t r = 0; r < d; ++r) centered[r] = x[r] - dict.b_pre[r];
    std::vector<double> a(m);
    for (std::size_t c = 0; c < m; ++c) a[c] = dot(dict.w_enc->row(c), centered);
    return a;
}

SparseCode topk_from_preactivations(std::span<const double> a, std::size_t big_k) {
    const auto kept = topk_select(a, big_k);
    std::vector<SparseEntry> entries;
    entries.reserve(kept.size());
    for (auto idx : kept)
        if (a[idx] > 0.0) entries.push_back({idx, float(a[idx])});
    SparseCode code = make_code(std::uint32_t(a.size()), std::move(entries));
    std::erase_if(code.entries, [](const SparseEntry& e) { return e.value == 0.0f; });
    return code;
}

SparseCode topk_encode(std::span<const float> x, const Dictionary& dict, const TopkConfig& cfg) {
    cfg.validate(dict.m());
    const auto a = topk_preactivations(x, dict);
    return topk_from_preactivations(a, cfg.big_k);
}

std::vector<SparseCode> topk_encode_batch(const Matrix& x, const Dictionary& dict,
                                          const TopkConfig& cfg, unsigned workers) {
    cfg.validate(dict.m());
    if (!dict.w_enc) throw ValidationError("dictionary has no encoder");
    std::vector<SparseCode> out(x.rows());
    parallel_for(
        x.rows(),
        [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i)
                out[i] = topk_from_preactivations(topk_preactivations(x.row(i), dict), cfg.big_k);
        },
        workers);
    return out;
}

SaeForward sae_forward(std::span<const float> x, const Dictionary& dict, const TopkConfig& cfg) {
    SaeForward f;
    f.code = topk_encode(x, dict, cfg);
    f.xhat = reconstruct(f.code, dict);
    double loss = 0.0;
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double e = double(x[r]) - double(f.xhat[r]);
        loss += e * e;
    }
    f.loss = float(loss);
    return f;
}

}  // namespace dlkit
