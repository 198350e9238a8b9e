#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dlkit/core.hpp"
#include "dlkit/encoders.hpp"

namespace dlkit {

// ---------------------------------------------------------------------------
// Selectivity

inline constexpr std::array<double, 3> kSelectivityThresholds = {0.5, 0.2, 0.1};

struct SelectivityConfig {
    // A feature is active on a sample when |value| > activation_threshold (0: any non-zero).
    double activation_threshold = 0.0;
};

struct LabelBest {
    std::int32_t label = 0;
    std::uint32_t feature = 0;
    double score = 0.0;
};

struct SelectivityReport {
    std::vector<std::int32_t> labels;        // distinct labels, ascending; column order below
    std::vector<std::size_t> label_counts;
    Matrix avg_sel;                          // m x L
    Matrix max_sel;                          // m x L
    std::vector<LabelBest> best_avg;         // per label, in label order
    std::vector<LabelBest> best_max;
    std::vector<double> sorted_best_avg;     // per-label maxima, descending
    std::vector<double> sorted_best_max;
    // Features whose best avg selectivity over labels exceeds each kSelectivityThresholds entry.
    std::array<std::size_t, 3> threshold_counts{};

    double mean_best_avg() const;
    double mean_best_max() const;
};

SelectivityReport selectivity(std::span<const SparseCode> codes, std::span<const std::int32_t> labels,
                              const SelectivityConfig& cfg = {});

// ---------------------------------------------------------------------------
// Linear probing

struct ProbeConfig {
    bool balanced = true;
    double l2 = 1e-4;
    std::size_t max_iter = 10000;
    double grad_tol = 1e-6;
    double initial_step = 1.0;
};

struct ProbeModel {
    Matrix weights;                 // L x d
    std::vector<float> bias;        // L
    std::vector<std::int32_t> classes;
    std::vector<double> class_weights;
    ProbeConfig config;
    std::size_t iterations = 0;
    double final_loss = 0.0;

    std::vector<std::int32_t> predict(const Matrix& x) const;
};

struct ProbeResult {
    ProbeModel model;
    double balanced_accuracy = 0.0;
    std::vector<double> per_class_recall; // aligned with model.classes; NaN if absent from test set
};

double balanced_accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth);
std::vector<double> per_class_recall(std::span<const std::int32_t> predicted,
                                     std::span<const std::int32_t> truth,
                                     std::span<const std::int32_t> classes);

ProbeModel train_probe(const Matrix& x, std::span<const std::int32_t> labels, const ProbeConfig& cfg = {});
ProbeResult fit_probe(const Matrix& x, std::span<const std::int32_t> labels, const Matrix& test_x,
                      std::span<const std::int32_t> test_labels, const ProbeConfig& cfg = {});

// ---------------------------------------------------------------------------
// Reconstruction and recovery

using EncoderConfig = std::variant<IcflConfig, TopkConfig>;

std::vector<SparseCode> encode_batch(const Matrix& x, const Dictionary& dict, const EncoderConfig& enc,
                                     unsigned workers = 1);

inline constexpr std::array<double, 5> kReconQuantiles = {0.05, 0.25, 0.50, 0.75, 0.95};

struct ReconReport {
    double mean_cosine = 0.0;
    double mean_l2_error = 0.0;
    std::array<double, 5> cosine_quantiles{};
};

ReconReport recon_quality(const Matrix& x, const Dictionary& dict, const EncoderConfig& enc,
                          unsigned workers = 1);
ReconReport recon_quality(const Matrix& x, const Dictionary& dict, std::span<const SparseCode> codes);

struct AtomMatch {
    std::uint32_t true_index = 0;
    std::uint32_t learned_index = 0;
    double abs_cosine = 0.0;
};

struct RecoveryResult {
    double fraction = 0.0;
    std::vector<AtomMatch> matching;  // sorted by true_index
};

// Greedy |cosine| matching of true atoms to distinct learned columns.
RecoveryResult recovery_score(const Matrix& w_learned, const Matrix& w_true, double tau = 0.9);

// Features active on fewer than threshold * samples of the given codes.
std::vector<std::uint32_t> dead_features(std::span<const SparseCode> codes, std::uint32_t m,
                                         double threshold = 1e-5);

// ---------------------------------------------------------------------------
// Separation and ranking

struct MannWhitney {
    double u = 0.0;                 // pairs (a > b) + 0.5 * ties
    double z = 0.0;
    double p_normal = 1.0;          // one-sided, continuity + tie corrected
    std::optional<double> p_exact;  // permutation distribution, when n1 * n2 <= 400
    double p_value = 1.0;           // p_exact if available, else p_normal
};

// One-sided test that `a` is stochastically greater than `b`.
MannWhitney mann_whitney(std::span<const double> a, std::span<const double> b);

inline constexpr std::size_t kHistogramBins = 64;

struct SeparationResult {
    std::array<std::size_t, kHistogramBins> hist_target{};
    std::array<std::size_t, kHistogramBins> hist_other{};
    std::vector<double> cos_target;
    std::vector<double> cos_other;
    MannWhitney test;
};

SeparationResult separation(const Matrix& x, std::span<const std::int32_t> labels,
                            std::span<const float> feature_dir, std::int32_t target_label);

// Row ids ordered by cosine with feature_dir (descending for sign > 0, ascending otherwise).
std::vector<std::size_t> rank_samples(const Matrix& x, std::span<const float> feature_dir,
                                      std::size_t top_n, int sign = 1);

// ---------------------------------------------------------------------------
// Dense-feature sparsification

// Linear-interpolation quantile of sorted values.
double quantile_type7(std::span<const double> sorted, double p);

struct QuantileSparsified {
    Matrix activation;  // n x p, 0/1
    double mean_nnz = 0.0;
};

QuantileSparsified quantile_sparsify(const Matrix& features, double alpha);
// Bisection on alpha in (0, 0.5) so that mean_nnz is close to target_nnz.
double solve_alpha(const Matrix& features, double target_nnz, std::size_t iterations = 40);
std::vector<SparseCode> activation_codes(const Matrix& activation);

double pearson(std::span<const double> a, std::span<const double> b);

struct CpComparison {
    double alpha = 0.0;
    double dense_mean_nnz = 0.0;
    double codes_mean_nnz = 0.0;
    SelectivityReport dense;
    SelectivityReport codes;
    double pearson_best_avg = 0.0;  // per-label best avg selectivity, dense vs codes
};

CpComparison cp_compare(const Matrix& dense_features, std::span<const SparseCode> codes,
                        std::span<const std::int32_t> labels, double alpha);

// ---------------------------------------------------------------------------
// Row/null space probing

struct SubspaceSplit {
    Matrix x_row;
    Matrix x_null;
    std::size_t rank = 0;
};

// Projects rows onto the column span of w_proj (d_e x d_d) and its orthogonal complement.
SubspaceSplit subspace_decompose(const Matrix& x, const Matrix& w_proj);
// Projection of rows onto a seeded random dim-dimensional orthonormal subspace.
Matrix random_subspace_projection(const Matrix& x, std::size_t dim, std::uint64_t seed);

struct ComponentProbe {
    double full = 0.0, row = 0.0, null = 0.0, random = 0.0;  // balanced accuracies
    double rel_row = 0.0, rel_null = 0.0, rel_random = 0.0;  // divided by full
};

ComponentProbe component_probe(const Matrix& x, std::span<const std::int32_t> labels,
                               const Matrix& w_proj, const Matrix& test_x,
                               std::span<const std::int32_t> test_labels, std::uint64_t seed = 0,
                               const ProbeConfig& cfg = {});

// ---------------------------------------------------------------------------
// Report serialization

nlohmann::json to_json(const SelectivityReport& r, bool include_tables = false);
nlohmann::json to_json(const ReconReport& r);
nlohmann::json to_json(const RecoveryResult& r);
nlohmann::json to_json(const MannWhitney& r);
nlohmann::json to_json(const SeparationResult& r);
nlohmann::json to_json(const ComponentProbe& r);
nlohmann::json to_json(const CpComparison& r);

}  // namespace dlkit
