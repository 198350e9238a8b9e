#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlkit/core.hpp"
#include "dlkit/dataset.hpp"
#include "dlkit/encoders.hpp"

namespace dlkit {

enum class Method { icfl, topk };
enum class OptimizerKind { sgd, adam };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(OptimizerKind o);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
    Method method = Method::icfl;
    float lr = 5e-5f;
    std::size_t batch_size = 8192;
    std::size_t steps = 300000;
    std::size_t m = 8192;
    IcflConfig icfl{};
    TopkConfig topk{};
    std::size_t reset_period = 100;
    float reset_cosine_threshold = 0.9f;
    // Resets are an ICFL mechanism; this enables them for the TopK baseline in ablations.
    bool topk_resets = false;
    std::size_t aux_k = 32;
    float aux_alpha = 1.0f / 32.0f;
    OptimizerKind optimizer = OptimizerKind::sgd;
    // Multiplier on lr for b_pre.
    float bias_lr_scale = 1.0f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    std::size_t dead_window = 1000;
    float dead_threshold = 1e-5f;
    std::size_t log_every = 100;
    std::size_t checkpoint_every = 10000;
    std::uint64_t seed = 0;
    unsigned workers = 1;

    // Settings from the reference experiments: M=8192, batch 8192, 300k steps, lr 5e-5.
    static TrainConfig paper_preset(Method method);
    // Laptop-scale settings used by the synthetic benchmarks.
    static TrainConfig desk_preset(Method method);

    std::size_t budget() const noexcept { return method == Method::icfl ? icfl.budget() : topk.budget(); }
    void validate(std::size_t d) const;

    // Every field except `workers`, which never changes results.
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys and a missing schema_version are errors.
    static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
    static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
};

// Activation counts over a trailing window of training steps.
class DeadFeatureTracker {
public:
    explicit DeadFeatureTracker(std::size_t m, std::size_t window = 1000, double threshold = 1e-5);

    // Records one training step worth of codes.
    void track(std::span<const SparseCode> codes);
    // Features whose activation fraction over the window is below the threshold.
    std::vector<std::uint32_t> dead_features() const;
    std::size_t dead_count() const { return dead_features().size(); }

    std::size_t tokens_seen() const noexcept { return tokens_; }
    std::uint64_t activations(std::uint32_t feature) const { return totals_.at(feature); }
    std::size_t m() const noexcept { return totals_.size(); }

private:
    struct StepCounts {
        std::vector<std::pair<std::uint32_t, std::uint32_t>> counts;
        std::size_t tokens = 0;
    };
    std::size_t window_;
    double threshold_;
    std::deque<StepCounts> steps_;
    std::vector<std::uint64_t> totals_;
    std::size_t tokens_ = 0;
};

// Dense f64 gradient buffers matching a Dictionary's parameters.
struct Gradients {
    std::vector<double> w_dec; // d x m, row-major
    std::vector<double> b_pre;
    std::vector<double> w_enc; // m x d, empty without an encoder

    static Gradients zeros_like(const Dictionary& dict);
    bool all_finite() const;
};

struct StepMetrics {
    double loss = 0.0;        // mean ||x - xhat||^2
    double aux_loss = 0.0;    // aux_alpha * mean ||e - e_aux||^2
    double recon_cosine = 0.0;
    std::size_t aux_features = 0;
};

// Gradient of the mean reconstruction loss w.r.t. w_dec and b_pre with the codes held fixed.
StepMetrics icfl_gradients(const Matrix& batch, const Dictionary& dict,
                           std::span<const SparseCode> codes, Gradients& grad);

struct AuxConfig {
    std::size_t aux_k = 32;
    double aux_alpha = 1.0 / 32.0;
};

// Main loss with a pass-through TopK gradient plus the auxiliary loss on `dead` features.
// The residual e = x - xhat is a constant inside the auxiliary term.
StepMetrics topk_gradients(const Matrix& batch, const Dictionary& dict, const TopkConfig& cfg,
                           std::span<const std::uint32_t> dead, const AuxConfig& aux,
                           Gradients& grad, std::vector<SparseCode>* codes = nullptr,
                           unsigned workers = 1);

class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
              double bias_lr_scale = 1.0);

    // Updates the parameters in place; throws DivergenceError on non-finite gradients.
    void apply(Dictionary& dict, const Gradients& grad);
    double lr() const noexcept { return lr_; }

private:
    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_, bias_lr_scale_;
    std::uint64_t t_ = 0;
    Gradients m1_, m2_;
};

struct StepResult {
    StepMetrics metrics;
    std::vector<SparseCode> codes;
};

// Encode with ICFL, then one decoder-only update followed by column renormalization.
StepResult icfl_step(const Matrix& batch, Dictionary& dict, const IcflConfig& cfg, Optimizer& opt,
                     unsigned workers = 1);
// TopK forward/backward with encoder and decoder updates, then decoder column renormalization.
StepResult topk_step(const Matrix& batch, Dictionary& dict, const TopkConfig& cfg,
                     std::span<const std::uint32_t> dead, const AuxConfig& aux, Optimizer& opt,
                     unsigned workers = 1);

std::vector<float> random_unit_vector(std::size_t d, std::mt19937_64& rng);
Dictionary init_dictionary(std::size_t d, std::size_t m, std::uint64_t seed, bool with_encoder = false);

// For every column pair with cosine above threshold (measured on the pre-scan snapshot), the
// higher-index column is redrawn on the sphere. An encoder row, if present, is redrawn to match.
std::size_t random_reset(Dictionary& dict, double threshold, std::mt19937_64& rng);

// Dictionary container: sections w_dec, b_pre and optionally w_enc; `header` is stored alongside.
void save_dictionary(const std::filesystem::path& path, const Dictionary& dict,
                     const nlohmann::json& header = nlohmann::json::object());
Dictionary load_dictionary(const std::filesystem::path& path, nlohmann::json* header = nullptr);

struct LogEntry {
    std::size_t step = 0;
    double loss = 0.0;
    double recon_cosine = 0.0;
    std::size_t dead_count = 0;
    std::size_t resets = 0;
    double aux_loss = 0.0;
};

nlohmann::json to_json(const LogEntry& e);

struct TrainCallbacks {
    std::function<void(const LogEntry&)> on_log;
    std::function<void(std::size_t step, const Dictionary&)> on_checkpoint;
};

struct TrainResult {
    Dictionary dict;
    std::vector<LogEntry> log;
    std::size_t final_dead_count = 0;
    std::vector<std::uint32_t> final_dead;
};

TrainResult train(const Matrix& data, const TrainConfig& cfg, const TrainCallbacks& cb = {});
// Requires a centered+normalized dataset; trains on perturbed rows unless include_controls.
TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg, bool include_controls = false,
                  const TrainCallbacks& cb = {});

}  // namespace dlkit
