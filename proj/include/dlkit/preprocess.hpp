#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dlkit/core.hpp"
#include "dlkit/dataset.hpp"

namespace dlkit {

// Center-rotate-scale transform fitted on control samples:
//   out = diag(scale) * basis^T * (x - mean)
struct WhitenTransform {
    std::vector<float> mean;
    Matrix basis;             // d x d, columns are principal directions, descending eigenvalue
    std::vector<float> scale; // 1 / sqrt(eigenvalue + eps)
    std::vector<double> eigenvalues;
    float eps = 1e-6f;
    std::uint64_t fit_rows = 0;
    std::uint64_t fit_checksum = 0;

    std::size_t dim() const noexcept { return mean.size(); }
    static WhitenTransform identity(std::size_t d);
};

struct ControlStats {
    std::vector<float> control_mean;
};

inline constexpr float kDefaultWhitenEps = 1e-6f;

WhitenTransform fit_whiten(const Matrix& control, float eps = kDefaultWhitenEps);
Matrix apply_whiten(const Matrix& x, const WhitenTransform& t);

ControlStats control_stats(const Matrix& control);
// (row - control_mean) / ||row - control_mean||; near-zero rows become zero rows.
Matrix center_and_normalize(const Matrix& x, const ControlStats& stats);

struct GroupMeans {
    Matrix means;                       // one row per distinct group, ascending id
    std::vector<std::int32_t> group_ids;
};
GroupMeans group_mean(const Matrix& x, std::span<const std::int32_t> groups);

// Dataset-level stages with provenance checks. The order is whiten -> center -> normalize and
// each stage runs at most once; violations throw ValidationError.
void whiten_dataset(LabeledDataset& ds, const WhitenTransform& t);
ControlStats center_normalize_dataset(LabeledDataset& ds);

void save_whiten(const std::filesystem::path& path, const WhitenTransform& t);
WhitenTransform load_whiten(const std::filesystem::path& path);

}  // namespace dlkit
