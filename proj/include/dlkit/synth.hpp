#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "dlkit/core.hpp"
#include "dlkit/dataset.hpp"

namespace dlkit {

// Generative model: x = W_true z + nuisance + noise, with label-dependent supports.
struct SynthConfig {
    std::size_t d = 64;
    std::size_t m_true = 128;
    std::size_t s = 5;             // true sparsity of perturbed samples
    std::size_t n = 50000;         // total rows, controls included
    std::size_t n_control = 2000;  // trailing rows with z = 0
    std::size_t labels = 8;
    // Features boosted under each label. Empty: label l gets features
    // [l*features_per_label, (l+1)*features_per_label).
    std::vector<std::vector<std::uint32_t>> label_feature_map;
    std::size_t features_per_label = 2;
    double boost_prob = 0.9;
    std::size_t nuisance_dims = 0;
    double nuisance_scale = 10.0;
    double noise_sigma = 0.02;
    bool signed_coefficients = false;
    std::size_t group_size = 1;    // consecutive samples sharing a label and a group id
    std::uint64_t seed = 0;

    void validate() const;
    // Materialized map (defaults expanded).
    std::vector<std::vector<std::uint32_t>> feature_map() const;

    nlohmann::json to_json() const;
    // Unknown keys and a missing or wrong schema_version are errors.
    static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthDataset {
    LabeledDataset data;
    Matrix w_true;                 // d x m_true
    std::vector<SparseCode> z_true;
    Matrix nuisance_basis;         // d x nuisance_dims, orthonormal columns
};

SynthDataset generate(const SynthConfig& cfg);

}  // namespace dlkit
