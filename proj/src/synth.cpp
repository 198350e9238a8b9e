#include "dlkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dlkit/training.hpp"

namespace dlkit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent stream per (seed, purpose, index) so rows can be generated in any order.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
    return std::mt19937_64(splitmix64(splitmix64(seed ^ (purpose << 56)) ^ index));
}

}  // namespace

void SynthConfig::validate() const {
    if (d == 0 || m_true == 0) throw ValidationError("d and m_true must be positive");
    if (s > m_true) throw ValidationError("s must not exceed m_true");
    if (nuisance_dims > d) throw ValidationError("nuisance_dims must not exceed d");
    if (n_control > n) throw ValidationError("n_control must not exceed n");
    if (labels == 0 && n_control < n) throw ValidationError("labels must be positive");
    if (group_size == 0) throw ValidationError("group_size must be positive");
    if (!(boost_prob >= 0.0 && boost_prob <= 1.0)) throw ValidationError("boost_prob must lie in [0, 1]");
    if (noise_sigma < 0.0 || nuisance_scale < 0.0) throw ValidationError("scales must be non-negative");
    if (!label_feature_map.empty() && label_feature_map.size() != labels)
        throw ValidationError("label_feature_map must have one entry per label");
    for (const auto& fs : feature_map())
        for (auto f : fs)
            if (f >= m_true) throw ValidationError("label_feature_map references feature >= m_true");
}

std::vector<std::vector<std::uint32_t>> SynthConfig::feature_map() const {
    if (!label_feature_map.empty()) return label_feature_map;
    std::vector<std::vector<std::uint32_t>> map(labels);
    for (std::size_t l = 0; l < labels; ++l)
        for (std::size_t q = 0; q < features_per_label; ++q) {
            const std::size_t f = l * features_per_label + q;
            if (f < m_true) map[l].push_back(std::uint32_t(f));
        }
    return map;
}

nlohmann::json SynthConfig::to_json() const {
    return {{"schema_version", 1},
            {"d", d},
            {"m_true", m_true},
            {"s", s},
            {"n", n},
            {"n_control", n_control},
            {"labels", labels},
            {"label_feature_map", label_feature_map},
            {"features_per_label", features_per_label},
            {"boost_prob", boost_prob},
            {"nuisance_dims", nuisance_dims},
            {"nuisance_scale", nuisance_scale},
            {"noise_sigma", noise_sigma},
            {"signed_coefficients", signed_coefficients},
            {"group_size", group_size},
            {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
    if (j.value("schema_version", 0) != 1) throw ValidationError("synth config needs schema_version 1");
    SynthConfig c;
    const auto known = c.to_json();
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw ValidationError("unknown synth config key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("d", c.d);
        get("m_true", c.m_true);
        get("s", c.s);
        get("n", c.n);
        get("n_control", c.n_control);
        get("labels", c.labels);
        get("label_feature_map", c.label_feature_map);
        get("features_per_label", c.features_per_label);
        get("boost_prob", c.boost_prob);
        get("nuisance_dims", c.nuisance_dims);
        get("nuisance_scale", c.nuisance_scale);
        get("noise_sigma", c.noise_sigma);
        get("signed_coefficients", c.signed_coefficients);
        get("group_size", c.group_size);
        get("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad synth config: ") + e.what());
    }
    c.validate();
    return c;
}

SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d, m = cfg.m_true, n = cfg.n;
    const auto fmap = cfg.feature_map();

    SynthDataset out;
    std::mt19937_64 global = stream(cfg.seed, 0, 0);
    out.w_true = Matrix(d, m);
    for (std::size_t c = 0; c < m; ++c) out.w_true.set_col(c, random_unit_vector(d, global));

    // Orthonormal nuisance basis by Gram-Schmidt on Gaussian draws.
    out.nuisance_basis = Matrix(d, cfg.nuisance_dims);
    std::vector<std::vector<double>> basis;
    while (basis.size() < cfg.nuisance_dims) {
        const auto v = random_unit_vector(d, global);
        std::vector<double> u(v.begin(), v.end());
        for (const auto& b : basis) {
            double p = 0.0;
            for (std::size_t r = 0; r < d; ++r) p += u[r] * b[r];
            for (std::size_t r = 0; r < d; ++r) u[r] -= p * b[r];
        }
        double sq = 0.0;
        for (double x : u) sq += x * x;
        if (sq < 1e-8) continue;
        for (double& x : u) x /= std::sqrt(sq);
        basis.push_back(std::move(u));
    }
    for (std::size_t q = 0; q < basis.size(); ++q)
        for (std::size_t r = 0; r < d; ++r) out.nuisance_basis(r, q) = float(basis[q][r]);

    auto& ds = out.data;
    ds.x = Matrix(n, d);
    ds.labels.resize(n);
    ds.groups.resize(n);
    ds.is_control.resize(n);
    out.z_true.resize(n);
    const std::size_t first_control = n - cfg.n_control;

    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t group = i / cfg.group_size;
        const bool control = i >= first_control;
        ds.groups[i] = std::int32_t(group);
        ds.is_control[i] = control ? 1 : 0;

        std::vector<SparseEntry> entries;
        if (control) {
            ds.labels[i] = kControlLabel;
        } else {
            auto grng = stream(cfg.seed, 1, group);
            const auto label = std::uniform_int_distribution<std::size_t>(0, cfg.labels - 1)(grng);
            ds.labels[i] = std::int32_t(label);

            auto rng = stream(cfg.seed, 2, i);
            std::normal_distribution<double> gauss(0.0, 1.0);
            std::set<std::uint32_t> support;
            std::bernoulli_distribution boosted(cfg.boost_prob);
            for (auto f : fmap[label])
                if (support.size() < cfg.s && boosted(rng)) support.insert(f);
            std::uniform_int_distribution<std::uint32_t> pick(0, std::uint32_t(m - 1));
            while (support.size() < cfg.s) support.insert(pick(rng));
            std::bernoulli_distribution flip(0.5);
            for (auto f : support) {
                double v = std::abs(gauss(rng)) + 0.5;
                if (cfg.signed_coefficients && flip(rng)) v = -v;
                entries.push_back({f, float(v)});
            }
        }
        out.z_true[i] = make_code(std::uint32_t(m), std::move(entries));

        std::fill(row.begin(), row.end(), 0.0);
        for (const auto& e : out.z_true[i].entries)
            for (std::size_t r = 0; r < d; ++r) row[r] += double(out.w_true(r, e.index)) * e.value;

        // Fresh distribution per row: normal_distribution caches values between calls.
        auto nrng = stream(cfg.seed, 3, i);
        std::normal_distribution<double> ngauss(0.0, 1.0);
        for (std::size_t q = 0; q < cfg.nuisance_dims; ++q) {
            const double g = cfg.nuisance_scale * ngauss(nrng);
            for (std::size_t r = 0; r < d; ++r) row[r] += g * basis[q][r];
        }
        if (cfg.noise_sigma > 0.0)
            for (std::size_t r = 0; r < d; ++r) row[r] += cfg.noise_sigma * ngauss(nrng);

        auto dst = ds.x.row(i);
        for (std::size_t r = 0; r < d; ++r) dst[r] = float(row[r]);
    }
    return out;
}

}  // namespace dlkit
