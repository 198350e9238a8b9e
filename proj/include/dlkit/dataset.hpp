#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dlkit/core.hpp"

namespace dlkit {

inline constexpr std::int32_t kControlLabel = -1;

// Which preprocessing stages have already been applied. Each flag can only go from false to true.
struct Provenance {
    bool whitened = false;
    bool centered = false;
    bool normalized = false;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

// Representations plus per-sample annotations. Control samples carry kControlLabel.
struct LabeledDataset {
    Matrix x;
    std::vector<std::int32_t> labels;
    std::vector<std::int32_t> groups;
    std::vector<std::uint8_t> is_control;
    Provenance provenance;

    std::size_t size() const noexcept { return x.rows(); }
    void validate() const;

    std::vector<std::size_t> control_rows() const;
    std::vector<std::size_t> perturbed_rows() const;
    // Subset with annotations and provenance carried over.
    LabeledDataset subset(std::span<const std::size_t> rows) const;
};

}  // namespace dlkit
