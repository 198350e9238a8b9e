#include "dlkit/dataset.hpp"

namespace dlkit {

void LabeledDataset::validate() const {
    const std::size_t n = x.rows();
    if (labels.size() != n || groups.size() != n || is_control.size() != n)
        throw ValidationError("dataset annotations do not match row count");
    for (std::size_t i = 0; i < n; ++i) {
        if (is_control[i] && labels[i] != kControlLabel)
            throw ValidationError("control sample with non-control label");
        if (!is_control[i] && labels[i] < 0) throw ValidationError("negative label on perturbed sample");
    }
}

std::vector<std::size_t> LabeledDataset::control_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < is_control.size(); ++i)
        if (is_control[i]) out.push_back(i);
    return out;
}

std::vector<std::size_t> LabeledDataset::perturbed_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < is_control.size(); ++i)
        if (!is_control[i]) out.push_back(i);
    return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
    LabeledDataset out;
    out.x = x.select_rows(rows);
    out.provenance = provenance;
    for (auto r : rows) {
        out.labels.push_back(labels[r]);
        out.groups.push_back(groups[r]);
        out.is_control.push_back(is_control[r]);
    }
    return out;
}

}  // namespace dlkit
