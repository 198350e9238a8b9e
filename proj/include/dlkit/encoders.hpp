#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dlkit/core.hpp"

namespace dlkit {

struct IcflConfig {
    std::size_t k = 5;  // columns selected per iteration
    std::size_t j = 20; // iterations
    // Select by |<w, x>| instead of the raw inner product.
    bool abs_selection = false;
    double ridge = kDefaultRidge;

    std::size_t budget() const noexcept { return j * k; }
    void validate(std::size_t m, std::size_t d) const;
};

struct TopkConfig {
    std::size_t big_k = 100;

    std::size_t budget() const noexcept { return big_k; }
    void validate(std::size_t m) const;
};

// Throws ValidationError("dictionary not unit-norm") if any column norm is off by more than tol.
void require_unit_norm(const Dictionary& dict, double tol = 1e-3);

// Per-iteration residual norms, ||x^(1)|| first.
struct IcflTrace {
    std::vector<double> residual_norms;
};

// Iterative top-k selection with restricted least squares on the residual. Holds a transposed
// copy of the decoder so repeated encodes touch contiguous columns; the dictionary must outlive it.
class IcflEncoder {
public:
    IcflEncoder(const Dictionary& dict, IcflConfig cfg);

    SparseCode encode(std::span<const float> x, IcflTrace* trace = nullptr) const;
    std::vector<SparseCode> encode_batch(const Matrix& x, unsigned workers = 0) const;

    const IcflConfig& config() const noexcept { return cfg_; }

private:
    const Dictionary& dict_;
    IcflConfig cfg_;
    Matrix columns_; // m x d
};

SparseCode icfl_encode(std::span<const float> x, const Dictionary& dict, const IcflConfig& cfg);
std::vector<SparseCode> icfl_encode_batch(const Matrix& x, const Dictionary& dict,
                                          const IcflConfig& cfg, unsigned workers = 0);

// a = W_enc (x - b_pre), accumulated in double.
std::vector<double> topk_preactivations(std::span<const float> x, const Dictionary& dict);
// TopK of the pre-activations followed by ReLU; non-positive kept values are dropped.
SparseCode topk_from_preactivations(std::span<const double> a, std::size_t big_k);
SparseCode topk_encode(std::span<const float> x, const Dictionary& dict, const TopkConfig& cfg);
std::vector<SparseCode> topk_encode_batch(const Matrix& x, const Dictionary& dict,
                                          const TopkConfig& cfg, unsigned workers = 0);

struct SaeForward {
    SparseCode code;
    std::vector<float> xhat;
    float loss = 0.0f;
};
SaeForward sae_forward(std::span<const float> x, const Dictionary& dict, const TopkConfig& cfg);

}  // namespace dlkit
