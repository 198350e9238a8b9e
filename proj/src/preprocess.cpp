#include "dlkit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Dense>

#include "dlkit/io.hpp"

namespace dlkit {

WhitenTransform WhitenTransform::identity(std::size_t d) {
    WhitenTransform t;
    t.mean.assign(d, 0.0f);
    t.basis = Matrix::identity(d);
    t.scale.assign(d, 1.0f);
    t.eigenvalues.assign(d, 1.0);
    return t;
}

WhitenTransform fit_whiten(const Matrix& control, float eps) {
    const std::size_t n = control.rows(), d = control.cols();
    if (n < 2) throw ValidationError("insufficient control samples");
    if (!(eps > 0.0f)) throw ValidationError("whitening eps must be positive");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(Eigen::Index(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mean[Eigen::Index(c)] += control(i, c);
    mean /= double(n);

    Eigen::MatrixXd centered{Eigen::Index(n), Eigen::Index(d)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            centered(Eigen::Index(i), Eigen::Index(c)) = control(i, c) - mean[Eigen::Index(c)];
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw DivergenceError("eigendecomposition failed");

    WhitenTransform t;
    t.eps = eps;
    t.fit_rows = n;
    t.fit_checksum = io::checksum(control);
    t.mean.resize(d);
    for (std::size_t c = 0; c < d; ++c) t.mean[c] = float(mean[Eigen::Index(c)]);
    t.basis = Matrix(d, d);
    t.scale.resize(d);
    t.eigenvalues.resize(d);
    // Eigen returns ascending eigenvalues; store descending.
    for (std::size_t j = 0; j < d; ++j) {
        const Eigen::Index src = Eigen::Index(d - 1 - j);
        const double lambda = std::max(0.0, solver.eigenvalues()[src]);
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        // Sign convention: largest-magnitude component positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        for (std::size_t r = 0; r < d; ++r) t.basis(r, j) = float(v[Eigen::Index(r)]);
        t.eigenvalues[j] = lambda;
        t.scale[j] = float(1.0 / std::sqrt(lambda + double(eps)));
    }
    return t;
}

Matrix apply_whiten(const Matrix& x, const WhitenTransform& t) {
    const std::size_t d = t.dim();
    if (x.cols() != d) throw ValidationError("whitening dimension mismatch");
    Matrix out(x.rows(), d);
    std::vector<double> centered(d), acc(d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto row = x.row(i);
        for (std::size_t c = 0; c < d; ++c) centered[c] = double(row[c]) - t.mean[c];
        std::fill(acc.begin(), acc.end(), 0.0);
        // acc = basis^T centered, accumulated row by row of basis.
        for (std::size_t r = 0; r < d; ++r) {
            const double v = centered[r];
            auto b = t.basis.row(r);
            for (std::size_t j = 0; j < d; ++j) acc[j] += double(b[j]) * v;
        }
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = float(acc[j] * t.scale[j]);
    }
    return out;
}

ControlStats control_stats(const Matrix& control) {
    if (control.rows() == 0) throw ValidationError("no control samples");
    std::vector<double> acc(control.cols(), 0.0);
    for (std::size_t i = 0; i < control.rows(); ++i) {
        auto row = control.row(i);
        for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += row[c];
    }
    ControlStats s;
    s.control_mean.resize(acc.size());
    for (std::size_t c = 0; c < acc.size(); ++c) s.control_mean[c] = float(acc[c] / double(control.rows()));
    return s;
}

Matrix center_and_normalize(const Matrix& x, const ControlStats& stats) {
    const std::size_t d = x.cols();
    if (stats.control_mean.size() != d) throw ValidationError("control mean dimension mismatch");
    Matrix out(x.rows(), d);
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto row = x.row(i);
        double sq = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            diff[c] = double(row[c]) - double(stats.control_mean[c]);
            sq += diff[c] * diff[c];
        }
        const double nrm = std::sqrt(sq);
        auto o = out.row(i);
        if (nrm < 1e-10) continue;
        for (std::size_t c = 0; c < d; ++c) o[c] = float(diff[c] / nrm);
    }
    return out;
}

GroupMeans group_mean(const Matrix& x, std::span<const std::int32_t> groups) {
    if (x.rows() == 0) throw ValidationError("empty input");
    if (groups.size() != x.rows()) throw ValidationError("group ids do not match row count");
    std::map<std::int32_t, std::pair<std::vector<double>, std::size_t>> acc;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto& [sum, count] = acc[groups[i]];
        if (sum.empty()) sum.assign(x.cols(), 0.0);
        auto row = x.row(i);
        for (std::size_t c = 0; c < x.cols(); ++c) sum[c] += row[c];
        ++count;
    }
    GroupMeans out;
    out.means = Matrix(acc.size(), x.cols());
    std::size_t r = 0;
    for (const auto& [id, entry] : acc) {
        out.group_ids.push_back(id);
        auto o = out.means.row(r++);
        for (std::size_t c = 0; c < x.cols(); ++c) o[c] = float(entry.first[c] / double(entry.second));
    }
    return out;
}

void whiten_dataset(LabeledDataset& ds, const WhitenTransform& t) {
    if (ds.provenance.whitened) throw ValidationError("dataset is already whitened");
    if (ds.provenance.centered || ds.provenance.normalized)
        throw ValidationError("whitening must precede centering and normalization");
    ds.x = apply_whiten(ds.x, t);
    ds.provenance.whitened = true;
}

ControlStats center_normalize_dataset(LabeledDataset& ds) {
    if (ds.provenance.centered || ds.provenance.normalized)
        throw ValidationError("dataset is already centered and normalized");
    const auto controls = ds.control_rows();
    if (controls.empty()) throw ValidationError("dataset has no control samples");
    ControlStats stats = control_stats(ds.x.select_rows(controls));
    ds.x = center_and_normalize(ds.x, stats);
    ds.provenance.centered = true;
    ds.provenance.normalized = true;
    return stats;
}

void save_whiten(const std::filesystem::path& path, const WhitenTransform& t) {
    const std::size_t d = t.dim();
    io::Container c;
    c.header = {{"kind", "whiten_transform"},
                {"eps", t.eps},
                {"fit_rows", t.fit_rows},
                {"fit_checksum", t.fit_checksum},
                {"eigenvalues", t.eigenvalues}};
    c.sections.emplace("mean", Matrix(1, d, t.mean));
    c.sections.emplace("basis", t.basis);
    c.sections.emplace("scale", Matrix(1, d, t.scale));
    io::save_container(path, c);
}

WhitenTransform load_whiten(const std::filesystem::path& path) {
    const io::Container c = io::load_container(path);
    if (c.header.value("kind", "") != "whiten_transform")
        throw ValidationError(path.string() + " is not a whitening transform");
    WhitenTransform t;
    try {
        t.eps = c.header.at("eps");
        t.fit_rows = c.header.at("fit_rows");
        t.fit_checksum = c.header.at("fit_checksum");
        t.eigenvalues = c.header.at("eigenvalues").get<std::vector<double>>();
        t.mean = c.sections.at("mean").values();
        t.basis = c.sections.at("basis");
        t.scale = c.sections.at("scale").values();
    } catch (const std::exception& e) {
        throw ValidationError("malformed whitening transform: " + std::string(e.what()));
    }
    const std::size_t d = t.mean.size();
    if (t.basis.rows() != d || t.basis.cols() != d || t.scale.size() != d)
        throw ValidationError("whitening transform sections disagree on dimension");
    return t;
}

}  // namespace dlkit
