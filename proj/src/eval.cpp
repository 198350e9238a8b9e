#include "dlkit/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <deque>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "dlkit/parallel.hpp"

namespace dlkit {

namespace {

std::vector<std::int32_t> distinct_sorted(std::span<const std::int32_t> v) {
    std::vector<std::int32_t> out(v.begin(), v.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::size_t index_of(const std::vector<std::int32_t>& sorted, std::int32_t v) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
    if (it == sorted.end() || *it != v) return sorted.size();
    return std::size_t(it - sorted.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Selectivity

double SelectivityReport::mean_best_avg() const {
    if (best_avg.empty()) return 0.0;
    double s = 0.0;
    for (const auto& b : best_avg) s += b.score;
    return s / double(best_avg.size());
}

double SelectivityReport::mean_best_max() const {
    if (best_max.empty()) return 0.0;
    double s = 0.0;
    for (const auto& b : best_max) s += b.score;
    return s / double(best_max.size());
}

SelectivityReport selectivity(std::span<const SparseCode> codes, std::span<const std::int32_t> labels,
                              const SelectivityConfig& cfg) {
    if (codes.size() != labels.size()) throw ValidationError("codes and labels are not aligned");
    if (codes.empty()) throw ValidationError("selectivity needs at least one sample");
    const std::uint32_t m = codes.front().dim;
    SelectivityReport rep;
    rep.labels = distinct_sorted(labels);
    const std::size_t L = rep.labels.size(), n = codes.size();
    if (L < 2) throw ValidationError("selectivity needs at least two labels");
    rep.label_counts.assign(L, 0);

    std::vector<std::size_t> counts(std::size_t(m) * L, 0), total(m, 0);
    for (std::size_t s = 0; s < n; ++s) {
        if (codes[s].dim != m) throw ValidationError("codes disagree on dimension");
        const std::size_t li = index_of(rep.labels, labels[s]);
        ++rep.label_counts[li];
        for (const auto& e : codes[s].entries) {
            if (!(std::abs(double(e.value)) > cfg.activation_threshold)) continue;
            ++counts[std::size_t(e.index) * L + li];
            ++total[e.index];
        }
    }
    for (std::size_t li = 0; li < L; ++li)
        if (rep.label_counts[li] == 0) throw ValidationError("label with zero samples");

    rep.avg_sel = Matrix(m, L);
    rep.max_sel = Matrix(m, L);
    std::vector<double> freq(L);
    for (std::uint32_t f = 0; f < m; ++f) {
        // Two largest per-label frequencies give max over j != i in O(L).
        double top1 = -1.0, top2 = -1.0;
        std::size_t arg1 = 0;
        for (std::size_t li = 0; li < L; ++li) {
            freq[li] = double(counts[std::size_t(f) * L + li]) / double(rep.label_counts[li]);
            if (freq[li] > top1) {
                top2 = top1;
                top1 = freq[li];
                arg1 = li;
            } else if (freq[li] > top2) {
                top2 = freq[li];
            }
        }
        for (std::size_t li = 0; li < L; ++li) {
            const std::size_t in = counts[std::size_t(f) * L + li];
            const double rest = double(total[f] - in) / double(n - rep.label_counts[li]);
            rep.avg_sel(f, li) = float(freq[li] - rest);
            rep.max_sel(f, li) = float(freq[li] - (li == arg1 ? top2 : top1));
        }
    }

    rep.best_avg.resize(L);
    rep.best_max.resize(L);
    for (std::size_t li = 0; li < L; ++li) {
        LabelBest ba{rep.labels[li], 0, -2.0}, bm{rep.labels[li], 0, -2.0};
        for (std::uint32_t f = 0; f < m; ++f) {
            if (rep.avg_sel(f, li) > ba.score) ba = {rep.labels[li], f, rep.avg_sel(f, li)};
            if (rep.max_sel(f, li) > bm.score) bm = {rep.labels[li], f, rep.max_sel(f, li)};
        }
        rep.best_avg[li] = ba;
        rep.best_max[li] = bm;
        rep.sorted_best_avg.push_back(ba.score);
        rep.sorted_best_max.push_back(bm.score);
    }
    std::sort(rep.sorted_best_avg.rbegin(), rep.sorted_best_avg.rend());
    std::sort(rep.sorted_best_max.rbegin(), rep.sorted_best_max.rend());

    for (std::uint32_t f = 0; f < m; ++f) {
        double best = -2.0;
        for (std::size_t li = 0; li < L; ++li) best = std::max(best, double(rep.avg_sel(f, li)));
        for (std::size_t t = 0; t < kSelectivityThresholds.size(); ++t)
            if (best > kSelectivityThresholds[t]) ++rep.threshold_counts[t];
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Linear probing

double balanced_accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth) {
    if (predicted.size() != truth.size()) throw ValidationError("prediction length mismatch");
    if (truth.empty()) throw ValidationError("empty evaluation set");
    const auto classes = distinct_sorted(truth);
    const auto recall = per_class_recall(predicted, truth, classes);
    return std::accumulate(recall.begin(), recall.end(), 0.0) / double(recall.size());
}

std::vector<double> per_class_recall(std::span<const std::int32_t> predicted,
                                     std::span<const std::int32_t> truth,
                                     std::span<const std::int32_t> classes) {
    std::vector<double> hit(classes.size(), 0.0), count(classes.size(), 0.0);
    const std::vector<std::int32_t> sorted(classes.begin(), classes.end());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (std::size_t c = 0; c < sorted.size(); ++c) {
            if (sorted[c] != truth[i]) continue;
            count[c] += 1.0;
            if (predicted[i] == truth[i]) hit[c] += 1.0;
        }
    }
    std::vector<double> out(classes.size());
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] = count[c] > 0 ? hit[c] / count[c] : std::numeric_limits<double>::quiet_NaN();
    return out;
}

namespace {

struct ProbeProblem {
    Eigen::MatrixXd x;           // n x d
    std::vector<std::size_t> y;  // class index per row
    Eigen::VectorXd sample_weight;
    std::size_t classes;
    double l2;

    std::size_t d() const { return std::size_t(x.cols()); }

    // Parameters laid out as [W (L x d, row-major) | b (L)].
    double loss(const std::vector<double>& theta, std::vector<double>* grad) const {
        const Eigen::Index n = x.rows(), dd = x.cols(), L = Eigen::Index(classes);
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const RowMajor> w(theta.data(), L, dd);
        Eigen::Map<const Eigen::VectorXd> b(theta.data() + L * dd, L);
        Eigen::MatrixXd logits = x * w.transpose();
        logits.rowwise() += b.transpose();
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto row = logits.row(i);
            const double mx = row.maxCoeff();
            const double lse = mx + std::log((row.array() - mx).exp().sum());
            const double wgt = sample_weight[i] / double(n);
            total += wgt * (lse - row[Eigen::Index(y[std::size_t(i)])]);
            if (grad) {
                // Reuse the row for d loss / d logits.
                row = wgt * (row.array() - lse).exp();
                row[Eigen::Index(y[std::size_t(i)])] -= wgt;
            }
        }
        const double reg = w.squaredNorm();
        if (grad) {
            grad->assign(theta.size(), 0.0);
            Eigen::Map<RowMajor> gw(grad->data(), L, dd);
            Eigen::Map<Eigen::VectorXd> gb(grad->data() + L * dd, L);
            gw = logits.transpose() * x + l2 * w;
            gb = logits.colwise().sum().transpose();
        }
        return total + 0.5 * l2 * reg;
    }
};

}  // namespace

std::vector<std::int32_t> ProbeModel::predict(const Matrix& x) const {
    if (x.cols() != weights.cols()) throw ValidationError("probe input width mismatch");
    std::vector<std::int32_t> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes.size(); ++c) {
            const double s = dot(weights.row(c), x.row(i)) + bias[c];
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        out[i] = classes[best];
    }
    return out;
}

ProbeModel train_probe(const Matrix& x, std::span<const std::int32_t> labels, const ProbeConfig& cfg) {
    if (x.rows() != labels.size()) throw ValidationError("probe labels not aligned with rows");
    ProbeModel model;
    model.config = cfg;
    model.classes = distinct_sorted(labels);
    const std::size_t L = model.classes.size(), d = x.cols(), n = x.rows();
    if (L < 2) throw ValidationError("single class: probing needs at least two classes");

    std::vector<double> counts(L, 0.0);
    ProbeProblem prob{Eigen::MatrixXd(Eigen::Index(n), Eigen::Index(d)), std::vector<std::size_t>(n),
                      Eigen::VectorXd(Eigen::Index(n)), L, cfg.l2};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) prob.x(Eigen::Index(i), Eigen::Index(c)) = x(i, c);
    for (std::size_t i = 0; i < n; ++i) {
        prob.y[i] = index_of(model.classes, labels[i]);
        counts[prob.y[i]] += 1.0;
    }
    model.class_weights.assign(L, 1.0);
    if (cfg.balanced) {
        double mean_inv = 0.0;
        for (double c : counts) mean_inv += 1.0 / c;
        mean_inv /= double(L);
        for (std::size_t c = 0; c < L; ++c) model.class_weights[c] = (1.0 / counts[c]) / mean_inv;
    }
    for (std::size_t i = 0; i < n; ++i) prob.sample_weight[Eigen::Index(i)] = model.class_weights[prob.y[i]];

    // L-BFGS (memory 10) with Armijo backtracking; falls back to steepest descent whenever the
    // quasi-Newton direction is not a descent direction.
    const std::size_t P = L * d + L, memory = 10;
    std::vector<double> theta(P, 0.0), grad, trial(P), trial_grad, dir(P), alpha(memory);
    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho;
    double f = prob.loss(theta, &grad);
    auto dotp = [](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t p = 0; p < a.size(); ++p) acc += a[p] * b[p];
        return acc;
    };
    std::size_t it = 0;
    for (; it < cfg.max_iter; ++it) {
        if (std::sqrt(dotp(grad, grad)) < cfg.grad_tol) break;
        // Two-loop recursion.
        for (std::size_t p = 0; p < P; ++p) dir[p] = -grad[p];
        for (std::size_t h = s_hist.size(); h-- > 0;) {
            alpha[h] = rho[h] * dotp(s_hist[h], dir);
            for (std::size_t p = 0; p < P; ++p) dir[p] -= alpha[h] * y_hist[h][p];
        }
        double step = cfg.initial_step;
        if (!s_hist.empty()) {
            const double gamma = dotp(s_hist.back(), y_hist.back()) / dotp(y_hist.back(), y_hist.back());
            for (double& v : dir) v *= gamma;
            step = 1.0;
        }
        for (std::size_t h = 0; h < s_hist.size(); ++h) {
            const double beta = rho[h] * dotp(y_hist[h], dir);
            for (std::size_t p = 0; p < P; ++p) dir[p] += (alpha[h] - beta) * s_hist[h][p];
        }
        double slope = dotp(grad, dir);
        if (!(slope < 0.0)) {
            for (std::size_t p = 0; p < P; ++p) dir[p] = -grad[p];
            slope = -dotp(grad, grad);
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            step = cfg.initial_step;
        }
        double f_trial = 0.0;
        for (;;) {
            for (std::size_t p = 0; p < P; ++p) trial[p] = theta[p] + step * dir[p];
            f_trial = prob.loss(trial, nullptr);
            if (f_trial <= f + 1e-4 * step * slope || step < 1e-16) break;
            step *= 0.5;
        }
        if (!std::isfinite(f_trial)) throw DivergenceError("divergence in probe training");
        if (!(f_trial < f)) break;  // no descent at the smallest step
        f = prob.loss(trial, &trial_grad);
        std::vector<double> sv(P), yv(P);
        for (std::size_t p = 0; p < P; ++p) {
            sv[p] = trial[p] - theta[p];
            yv[p] = trial_grad[p] - grad[p];
        }
        const double sy = dotp(sv, yv);
        if (sy > 1e-12 * std::sqrt(dotp(sv, sv) * dotp(yv, yv))) {
            if (s_hist.size() == memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho.pop_front();
            }
            s_hist.push_back(std::move(sv));
            y_hist.push_back(std::move(yv));
            rho.push_back(1.0 / sy);
        }
        theta.swap(trial);
        grad.swap(trial_grad);
    }
    model.iterations = it;
    model.final_loss = f;
    model.weights = Matrix(L, d);
    model.bias.resize(L);
    for (std::size_t c = 0; c < L; ++c) {
        for (std::size_t r = 0; r < d; ++r) model.weights(c, r) = float(theta[c * d + r]);
        model.bias[c] = float(theta[L * d + c]);
    }
    return model;
}

ProbeResult fit_probe(const Matrix& x, std::span<const std::int32_t> labels, const Matrix& test_x,
                      std::span<const std::int32_t> test_labels, const ProbeConfig& cfg) {
    if (test_x.rows() != test_labels.size()) throw ValidationError("holdout labels not aligned");
    ProbeResult res;
    res.model = train_probe(x, labels, cfg);
    const auto test_classes = distinct_sorted(test_labels);
    bool overlap = false;
    for (auto c : test_classes) overlap = overlap || index_of(res.model.classes, c) < res.model.classes.size();
    if (!overlap) throw ValidationError("train and test label sets do not overlap");
    const auto pred = res.model.predict(test_x);
    res.balanced_accuracy = balanced_accuracy(pred, test_labels);
    res.per_class_recall = per_class_recall(pred, test_labels, res.model.classes);
    return res;
}

// ---------------------------------------------------------------------------
// Reconstruction and recovery

std::vector<SparseCode> encode_batch(const Matrix& x, const Dictionary& dict, const EncoderConfig& enc,
                                     unsigned workers) {
    if (const auto* icfl = std::get_if<IcflConfig>(&enc)) return icfl_encode_batch(x, dict, *icfl, workers);
    return topk_encode_batch(x, dict, std::get<TopkConfig>(enc), workers);
}

ReconReport recon_quality(const Matrix& x, const Dictionary& dict, const EncoderConfig& enc, unsigned workers) {
    const auto codes = encode_batch(x, dict, enc, workers);
    return recon_quality(x, dict, codes);
}

ReconReport recon_quality(const Matrix& x, const Dictionary& dict, std::span<const SparseCode> codes) {
    if (codes.size() != x.rows()) throw ValidationError("codes do not match rows");
    ReconReport rep;
    if (x.rows() == 0) return rep;
    std::vector<double> cosines(x.rows());
    double err_sum = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto xhat = reconstruct(codes[i], dict);
        auto row = x.row(i);
        cosines[i] = cosine(row, xhat);
        double sq = 0.0;
        for (std::size_t r = 0; r < row.size(); ++r) {
            const double e = double(row[r]) - double(xhat[r]);
            sq += e * e;
        }
        err_sum += std::sqrt(sq);
    }
    rep.mean_cosine = std::accumulate(cosines.begin(), cosines.end(), 0.0) / double(x.rows());
    rep.mean_l2_error = err_sum / double(x.rows());
    std::sort(cosines.begin(), cosines.end());
    for (std::size_t q = 0; q < kReconQuantiles.size(); ++q)
        rep.cosine_quantiles[q] = quantile_type7(cosines, kReconQuantiles[q]);
    return rep;
}

RecoveryResult recovery_score(const Matrix& w_learned, const Matrix& w_true, double tau) {
    if (w_learned.rows() != w_true.rows()) throw ValidationError("dictionaries differ in dimension");
    const Matrix learned = w_learned.transposed(), truth = w_true.transposed();
    const std::size_t M = learned.rows(), T = truth.rows();
    struct Pair {
        double c;
        std::uint32_t t, l;
    };
    std::vector<Pair> pairs;
    pairs.reserve(M * T);
    std::vector<double> ln(M);
    for (std::size_t l = 0; l < M; ++l) ln[l] = norm(learned.row(l));
    for (std::size_t t = 0; t < T; ++t) {
        const double tn = norm(truth.row(t));
        for (std::size_t l = 0; l < M; ++l) {
            const double den = tn * ln[l];
            const double c = den > 1e-24 ? std::abs(dot(truth.row(t), learned.row(l))) / den : 0.0;
            pairs.push_back({c, std::uint32_t(t), std::uint32_t(l)});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.c != b.c) return a.c > b.c;
        if (a.t != b.t) return a.t < b.t;
        return a.l < b.l;
    });
    std::vector<bool> used_t(T, false), used_l(M, false);
    RecoveryResult res;
    std::size_t hits = 0;
    for (const auto& p : pairs) {
        if (used_t[p.t] || used_l[p.l]) continue;
        used_t[p.t] = used_l[p.l] = true;
        res.matching.push_back({p.t, p.l, p.c});
        if (p.c >= tau) ++hits;
        if (res.matching.size() == std::min(T, M)) break;
    }
    std::sort(res.matching.begin(), res.matching.end(),
              [](const AtomMatch& a, const AtomMatch& b) { return a.true_index < b.true_index; });
    res.fraction = T > 0 ? double(hits) / double(T) : 0.0;
    return res;
}

std::vector<std::uint32_t> dead_features(std::span<const SparseCode> codes, std::uint32_t m, double threshold) {
    std::vector<std::size_t> counts(m, 0);
    for (const auto& c : codes) {
        if (c.dim != m) throw ValidationError("code dim mismatch");
        for (const auto& e : c.entries)
            if (e.value != 0.0f) ++counts[e.index];
    }
    const double denom = std::max<double>(1.0, double(codes.size()));
    std::vector<std::uint32_t> dead;
    for (std::uint32_t f = 0; f < m; ++f)
        if (double(counts[f]) / denom < threshold) dead.push_back(f);
    return dead;
}

// ---------------------------------------------------------------------------
// Separation and ranking

MannWhitney mann_whitney(std::span<const double> a, std::span<const double> b) {
    const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
    if (n1 == 0 || n2 == 0) throw ValidationError("Mann-Whitney needs two non-empty groups");
    struct Item {
        double v;
        bool first;
    };
    std::vector<Item> pooled;
    pooled.reserve(n);
    for (double v : a) pooled.push_back({v, true});
    for (double v : b) pooled.push_back({v, false});
    std::stable_sort(pooled.begin(), pooled.end(), [](const Item& x, const Item& y) { return x.v < y.v; });

    // Doubled midranks keep everything integral.
    std::vector<std::size_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pooled[j].v == pooled[i].v) ++j;
        const std::size_t r2 = i + j + 1;  // 2 * mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) rank2[k] = r2;
        const double t = double(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    std::size_t r1_2 = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (pooled[k].first) r1_2 += rank2[k];

    MannWhitney res;
    res.u = double(r1_2) / 2.0 - double(n1) * double(n1 + 1) / 2.0;
    const double mean = double(n1) * double(n2) / 2.0;
    const double var = double(n1) * double(n2) / 12.0 *
                       (double(n + 1) - (n > 1 ? tie_term / (double(n) * double(n - 1)) : 0.0));
    if (var > 0.0) {
        res.z = (res.u - mean - 0.5) / std::sqrt(var);
        res.p_normal = 0.5 * std::erfc(res.z / std::sqrt(2.0));
    } else {
        res.z = 0.0;
        res.p_normal = 1.0;
    }
    res.p_value = res.p_normal;

    if (n1 * n2 <= 400) {
        // Permutation distribution of the doubled rank sum over all n1-subsets.
        std::size_t max_sum = 0;
        for (auto r : rank2) max_sum += r;
        std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(max_sum + 1, 0.0));
        ways[0][0] = 1.0;
        std::size_t reach = 0;
        for (std::size_t k = 0; k < n; ++k) {
            reach += rank2[k];
            for (std::size_t j = std::min(n1, k + 1); j >= 1; --j)
                for (std::size_t s = reach; s >= rank2[k]; --s) {
                    ways[j][s] += ways[j - 1][s - rank2[k]];
                    if (s == 0) break;
                }
        }
        double total = 0.0, tail = 0.0;
        for (std::size_t s = 0; s <= max_sum; ++s) {
            total += ways[n1][s];
            if (s >= r1_2) tail += ways[n1][s];
        }
        res.p_exact = tail / total;
        res.p_value = *res.p_exact;
    }
    return res;
}

namespace {

std::vector<double> row_cosines(const Matrix& x, std::span<const float> dir) {
    if (dir.size() != x.cols()) throw ValidationError("feature direction length mismatch");
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = cosine(x.row(i), dir);
    return out;
}

std::size_t histogram_bin(double c) {
    const double pos = (std::clamp(c, -1.0, 1.0) + 1.0) / 2.0 * double(kHistogramBins);
    return std::min<std::size_t>(kHistogramBins - 1, std::size_t(pos));
}

}  // namespace

SeparationResult separation(const Matrix& x, std::span<const std::int32_t> labels,
                            std::span<const float> feature_dir, std::int32_t target_label) {
    if (labels.size() != x.rows()) throw ValidationError("labels not aligned with rows");
    const auto cos = row_cosines(x, feature_dir);
    SeparationResult res;
    for (std::size_t i = 0; i < cos.size(); ++i) {
        if (labels[i] == target_label) {
            res.cos_target.push_back(cos[i]);
            ++res.hist_target[histogram_bin(cos[i])];
        } else {
            res.cos_other.push_back(cos[i]);
            ++res.hist_other[histogram_bin(cos[i])];
        }
    }
    if (res.cos_target.size() < 2 || res.cos_other.size() < 2)
        throw ValidationError("separation needs at least two samples per group");
    res.test = mann_whitney(res.cos_target, res.cos_other);
    return res;
}

std::vector<std::size_t> rank_samples(const Matrix& x, std::span<const float> feature_dir,
                                      std::size_t top_n, int sign) {
    const auto cos = row_cosines(x, feature_dir);
    std::vector<std::size_t> idx(x.rows());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    top_n = std::min(top_n, idx.size());
    auto cmp = [&](std::size_t a, std::size_t b) {
        if (cos[a] != cos[b]) return sign >= 0 ? cos[a] > cos[b] : cos[a] < cos[b];
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(top_n), idx.end(), cmp);
    idx.resize(top_n);
    return idx;
}

// ---------------------------------------------------------------------------
// Dense-feature sparsification

double quantile_type7(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ValidationError("quantile of empty sample");
    const double h = (double(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const std::size_t lo = std::size_t(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

std::vector<std::vector<double>> sorted_columns(const Matrix& f) {
    std::vector<std::vector<double>> cols(f.cols(), std::vector<double>(f.rows()));
    for (std::size_t i = 0; i < f.rows(); ++i)
        for (std::size_t c = 0; c < f.cols(); ++c) cols[c][i] = f(i, c);
    for (auto& c : cols) std::sort(c.begin(), c.end());
    return cols;
}

double mean_nnz_at(const std::vector<std::vector<double>>& cols, std::size_t n, double alpha) {
    std::size_t active = 0;
    for (const auto& col : cols) {
        const double lo = quantile_type7(col, alpha), hi = quantile_type7(col, 1.0 - alpha);
        active += std::size_t(std::lower_bound(col.begin(), col.end(), lo) - col.begin());
        active += std::size_t(col.end() - std::upper_bound(col.begin(), col.end(), hi));
    }
    return n > 0 ? double(active) / double(n) : 0.0;
}

}  // namespace

QuantileSparsified quantile_sparsify(const Matrix& features, double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must lie in (0, 0.5)");
    const auto cols = sorted_columns(features);
    QuantileSparsified out;
    out.activation = Matrix(features.rows(), features.cols());
    std::size_t active = 0;
    for (std::size_t c = 0; c < features.cols(); ++c) {
        const double lo = quantile_type7(cols[c], alpha), hi = quantile_type7(cols[c], 1.0 - alpha);
        for (std::size_t i = 0; i < features.rows(); ++i) {
            const double v = features(i, c);
            if (v < lo || v > hi) {
                out.activation(i, c) = 1.0f;
                ++active;
            }
        }
    }
    out.mean_nnz = features.rows() ? double(active) / double(features.rows()) : 0.0;
    return out;
}

double solve_alpha(const Matrix& features, double target_nnz, std::size_t iterations) {
    const auto cols = sorted_columns(features);
    double lo = 0.0, hi = 0.5;
    for (std::size_t it = 0; it < iterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mean_nnz_at(cols, features.rows(), mid) < target_nnz)
            lo = mid;
        else
            hi = mid;
    }
    return std::clamp(0.5 * (lo + hi), 1e-12, 0.5 - 1e-12);
}

std::vector<SparseCode> activation_codes(const Matrix& activation) {
    std::vector<SparseCode> codes(activation.rows());
    for (std::size_t i = 0; i < activation.rows(); ++i) {
        codes[i].dim = std::uint32_t(activation.cols());
        auto row = activation.row(i);
        for (std::size_t c = 0; c < row.size(); ++c)
            if (row[c] != 0.0f) codes[i].entries.push_back({std::uint32_t(c), row[c]});
    }
    return codes;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ValidationError("pearson needs two equal series of length >= 2");
    const double n = double(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

CpComparison cp_compare(const Matrix& dense_features, std::span<const SparseCode> codes,
                        std::span<const std::int32_t> labels, double alpha) {
    if (dense_features.rows() != codes.size()) throw ValidationError("dense features and codes differ in rows");
    CpComparison out;
    out.alpha = alpha;
    const auto sparse = quantile_sparsify(dense_features, alpha);
    out.dense_mean_nnz = sparse.mean_nnz;
    std::size_t nnz = 0;
    for (const auto& c : codes) nnz += c.nnz();
    out.codes_mean_nnz = codes.empty() ? 0.0 : double(nnz) / double(codes.size());
    const auto dense_codes = activation_codes(sparse.activation);
    out.dense = selectivity(dense_codes, labels);
    out.codes = selectivity(codes, labels);
    std::vector<double> a, b;
    for (std::size_t li = 0; li < out.dense.best_avg.size(); ++li) {
        a.push_back(out.dense.best_avg[li].score);
        b.push_back(out.codes.best_avg[li].score);
    }
    out.pearson_best_avg = a.size() >= 2 ? pearson(a, b) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Row/null space probing

namespace {

Matrix project_rows(const Matrix& x, const Eigen::MatrixXd& q) {
    const std::size_t d = x.cols();
    Matrix out(x.rows(), d);
    const Eigen::Index k = q.cols();
    Eigen::VectorXd coords(k);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto row = x.row(i);
        Eigen::Map<const Eigen::VectorXf> v(row.data(), Eigen::Index(d));
        coords = q.transpose() * v.cast<double>();
        const Eigen::VectorXd p = q * coords;
        auto o = out.row(i);
        for (std::size_t r = 0; r < d; ++r) o[r] = float(p[Eigen::Index(r)]);
    }
    return out;
}

}  // namespace

SubspaceSplit subspace_decompose(const Matrix& x, const Matrix& w_proj) {
    const std::size_t de = w_proj.rows(), dd = w_proj.cols();
    if (x.cols() != de) throw ValidationError("projection rows must match sample width");
    if (dd > de) throw ValidationError("projection must have at most as many columns as rows");
    Eigen::MatrixXd w{Eigen::Index(de), Eigen::Index(dd)};
    for (std::size_t r = 0; r < de; ++r)
        for (std::size_t c = 0; c < dd; ++c) w(Eigen::Index(r), Eigen::Index(c)) = w_proj(r, c);

    SubspaceSplit out;
    if (dd > 0 && w.cwiseAbs().maxCoeff() > 0.0) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(w);
        qr.setThreshold(1e-6);
        out.rank = std::size_t(qr.rank());
        const Eigen::MatrixXd q_full = qr.householderQ() * Eigen::MatrixXd::Identity(Eigen::Index(de), Eigen::Index(out.rank));
        out.x_row = project_rows(x, q_full);
    } else {
        out.x_row = Matrix(x.rows(), de);
    }
    out.x_null = Matrix(x.rows(), de);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t r = 0; r < de; ++r) out.x_null(i, r) = x(i, r) - out.x_row(i, r);
    return out;
}

Matrix random_subspace_projection(const Matrix& x, std::size_t dim, std::uint64_t seed) {
    const std::size_t d = x.cols();
    if (dim > d) throw ValidationError("random subspace larger than ambient space");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g{Eigen::Index(d), Eigen::Index(dim)};
    for (Eigen::Index c = 0; c < g.cols(); ++c)
        for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(Eigen::Index(d), Eigen::Index(dim));
    return project_rows(x, q);
}

ComponentProbe component_probe(const Matrix& x, std::span<const std::int32_t> labels,
                               const Matrix& w_proj, const Matrix& test_x,
                               std::span<const std::int32_t> test_labels, std::uint64_t seed,
                               const ProbeConfig& cfg) {
    const auto tr = subspace_decompose(x, w_proj);
    const auto te = subspace_decompose(test_x, w_proj);
    ComponentProbe out;
    out.full = fit_probe(x, labels, test_x, test_labels, cfg).balanced_accuracy;
    out.row = fit_probe(tr.x_row, labels, te.x_row, test_labels, cfg).balanced_accuracy;
    out.null = fit_probe(tr.x_null, labels, te.x_null, test_labels, cfg).balanced_accuracy;
    const std::size_t dim = w_proj.cols();
    out.random = fit_probe(random_subspace_projection(x, dim, seed), labels,
                           random_subspace_projection(test_x, dim, seed), test_labels, cfg)
                     .balanced_accuracy;
    const double denom = out.full > 0.0 ? out.full : 1.0;
    out.rel_row = out.row / denom;
    out.rel_null = out.null / denom;
    out.rel_random = out.random / denom;
    return out;
}

// ---------------------------------------------------------------------------
// Report serialization

nlohmann::json to_json(const SelectivityReport& r, bool include_tables) {
    nlohmann::json j;
    j["labels"] = r.labels;
    j["label_counts"] = r.label_counts;
    auto best = [](const std::vector<LabelBest>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& b : v) a.push_back({{"label", b.label}, {"feature", b.feature}, {"score", b.score}});
        return a;
    };
    j["best_avg"] = best(r.best_avg);
    j["best_max"] = best(r.best_max);
    j["sorted_best_avg"] = r.sorted_best_avg;
    j["sorted_best_max"] = r.sorted_best_max;
    j["mean_best_avg"] = r.mean_best_avg();
    j["mean_best_max"] = r.mean_best_max();
    nlohmann::json counts = nlohmann::json::object();
    for (std::size_t t = 0; t < kSelectivityThresholds.size(); ++t)
        counts[std::to_string(kSelectivityThresholds[t])] = r.threshold_counts[t];
    j["threshold_counts"] = counts;
    if (include_tables) {
        j["avg_sel"] = r.avg_sel.values();
        j["max_sel"] = r.max_sel.values();
        j["table_shape"] = {r.avg_sel.rows(), r.avg_sel.cols()};
    }
    return j;
}

nlohmann::json to_json(const ReconReport& r) {
    nlohmann::json q = nlohmann::json::object();
    for (std::size_t i = 0; i < kReconQuantiles.size(); ++i)
        q[std::to_string(int(std::lround(kReconQuantiles[i] * 100)))] = r.cosine_quantiles[i];
    return {{"mean_cosine", r.mean_cosine}, {"mean_l2_error", r.mean_l2_error}, {"cosine_quantiles", q}};
}

nlohmann::json to_json(const RecoveryResult& r) {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& a : r.matching)
        m.push_back({{"true", a.true_index}, {"learned", a.learned_index}, {"abs_cosine", a.abs_cosine}});
    return {{"fraction", r.fraction}, {"matching", m}};
}

nlohmann::json to_json(const MannWhitney& r) {
    nlohmann::json j = {{"u", r.u}, {"z", r.z}, {"p_normal", r.p_normal}, {"p_value", r.p_value}};
    j["p_exact"] = r.p_exact ? nlohmann::json(*r.p_exact) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json to_json(const SeparationResult& r) {
    return {{"bins", kHistogramBins},
            {"range", {-1.0, 1.0}},
            {"hist_target", r.hist_target},
            {"hist_other", r.hist_other},
            {"n_target", r.cos_target.size()},
            {"n_other", r.cos_other.size()},
            {"mann_whitney", to_json(r.test)}};
}

nlohmann::json to_json(const ComponentProbe& r) {
    return {{"balanced_accuracy", {{"full", r.full}, {"row", r.row}, {"null", r.null}, {"random", r.random}}},
            {"relative", {{"full", 1.0}, {"row", r.rel_row}, {"null", r.rel_null}, {"random", r.rel_random}}}};
}

nlohmann::json to_json(const CpComparison& r) {
    std::vector<double> dense_series, code_series;
    for (std::size_t li = 0; li < r.dense.best_avg.size(); ++li) {
        dense_series.push_back(r.dense.best_avg[li].score);
        code_series.push_back(r.codes.best_avg[li].score);
    }
    return {{"alpha", r.alpha},
            {"dense_mean_nnz", r.dense_mean_nnz},
            {"codes_mean_nnz", r.codes_mean_nnz},
            {"labels", r.dense.labels},
            {"dense_best_avg", dense_series},
            {"codes_best_avg", code_series},
            {"dense_sorted_best_avg", r.dense.sorted_best_avg},
            {"codes_sorted_best_avg", r.codes.sorted_best_avg},
            {"dense_mean_best_avg", r.dense.mean_best_avg()},
            {"codes_mean_best_avg", r.codes.mean_best_avg()},
            {"pearson_best_avg", r.pearson_best_avg}};
}

}  // namespace dlkit
