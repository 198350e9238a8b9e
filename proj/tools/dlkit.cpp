// dlkit: generate, preprocess, train, encode and evaluate sparse dictionaries.
//
// Exit codes: 0 success, 2 validation error (including bad flags), 3 numerical divergence,
// 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dlkit/eval.hpp"
#include "dlkit/io.hpp"
#include "dlkit/manifest.hpp"
#include "dlkit/parallel.hpp"
#include "dlkit/preprocess.hpp"
#include "dlkit/synth.hpp"
#include "dlkit/training.hpp"

using namespace dlkit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
    try {
        return json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

// Report to --out (atomically) or stdout.
void emit(const std::string& out, bool force, const json& report) {
    if (out.empty()) {
        std::cout << report.dump(2) << "\n";
        return;
    }
    check_output(out, force);
    write_json(out, report);
}

std::string relative_to(const fs::path& p, const fs::path& base) {
    return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
}

// Copies extra (non-core) files of a source dataset into a derived one.
Manifest derive(const fs::path& src, const fs::path& dst, const Manifest& m) {
    fs::create_directories(dst);
    for (const auto& [role, name] : m.files.items()) {
        const std::string f = name.get<std::string>();
        if (role == "x" || role == "labels" || role == "groups" || role == "control") continue;
        io::write_file_atomic(dst / f, io::read_file(src / f));
    }
    Manifest out = m;
    out.artifacts = json::object();
    return out;
}

void register_artifact(const fs::path& data_dir, const fs::path& artifact, const std::string& kind,
                       const std::string& hash) {
    update_manifest(data_dir, [&](Manifest& m) {
        m.artifacts[relative_to(artifact, data_dir)] = {{"kind", kind}, {"config_hash", hash}};
    });
}

std::vector<std::size_t> rows_for(const LabeledDataset& ds, bool include_controls) {
    if (include_controls) {
        std::vector<std::size_t> all(ds.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    return ds.perturbed_rows();
}

std::vector<std::int32_t> gather(const std::vector<std::int32_t>& v, const std::vector<std::size_t>& rows) {
    std::vector<std::int32_t> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(v[r]);
    return out;
}

std::vector<SparseCode> gather(const std::vector<SparseCode>& v, const std::vector<std::size_t>& rows) {
    std::vector<SparseCode> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(v.at(r));
    return out;
}

Matrix dense_codes(const std::vector<SparseCode>& codes, std::uint32_t m) {
    Matrix x(codes.size(), m);
    for (std::size_t i = 0; i < codes.size(); ++i)
        for (const auto& e : codes[i].entries) x(i, e.index) = e.value;
    return x;
}

std::vector<SparseCode> load_codes_for(const fs::path& path, const LabeledDataset& ds) {
    auto codes = io::load_codes(path);
    if (codes.size() != ds.size()) throw ValidationError(path.string() + ": code count does not match dataset rows");
    return codes;
}

// Deterministic group-level holdout split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(const LabeledDataset& ds,
                                                                         const std::vector<std::size_t>& rows,
                                                                         double test_fraction,
                                                                         std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("--test-fraction must lie in (0, 1)");
    std::vector<std::size_t> train, test;
    for (auto r : rows) {
        std::uint64_t h = io::fnv1a(std::to_string(ds.groups[r]), seed ^ 0xcbf29ce484222325ull);
        const double u = double(h >> 11) * 0x1.0p-53;
        (u < test_fraction ? test : train).push_back(r);
    }
    if (train.empty() || test.empty()) throw ValidationError("holdout split left one side empty");
    return {train, test};
}

// ---------------------------------------------------------------------------
// Training options shared by train and sweep

struct TrainOptions {
    std::string preset = "desk";
    std::string config;
    std::string method;
    std::optional<std::size_t> k, j, big_k, m, steps, batch, log_every, checkpoint_every, aux_k;
    std::optional<float> lr, aux_alpha, bias_lr_scale;
    std::optional<std::uint64_t> seed;
    std::string optimizer;
    bool include_controls = false;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "Base settings")->check(CLI::IsMember({"desk", "paper"}));
        app->add_option("--config", config, "Train config JSON (schema_version 1), applied over the preset");
        app->add_option("--method", method, "icfl or topk")->check(CLI::IsMember({"icfl", "topk"}));
        app->add_option("--k", k, "ICFL columns per iteration");
        app->add_option("--j", j, "ICFL iterations");
        app->add_option("--K", big_k, "TopK sparsity");
        app->add_option("--m", m, "Dictionary size");
        app->add_option("--lr", lr, "Learning rate");
        app->add_option("--steps", steps, "Training steps");
        app->add_option("--batch", batch, "Batch size");
        app->add_option("--seed", seed, "Seed");
        app->add_option("--optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
        app->add_option("--aux-k", aux_k, "Dead features used by the auxiliary loss");
        app->add_option("--aux-alpha", aux_alpha, "Auxiliary loss weight (0 disables)");
        app->add_option("--bias-lr-scale", bias_lr_scale, "Learning-rate multiplier for b_pre");
        app->add_option("--log-every", log_every, "Log interval in steps");
        app->add_option("--checkpoint-every", checkpoint_every, "Checkpoint interval (0 disables)");
        app->add_flag("--include-controls", include_controls, "Train on control rows as well");
    }

    TrainConfig build() const {
        const Method meth = method.empty() ? Method::icfl : method_from_string(method);
        TrainConfig c = preset == "paper" ? TrainConfig::paper_preset(meth) : TrainConfig::desk_preset(meth);
        if (!config.empty()) c = TrainConfig::from_json(read_json(config), c);
        if (!method.empty()) c.method = meth;
        if (k) c.icfl.k = *k;
        if (j) c.icfl.j = *j;
        if (big_k) c.topk.big_k = *big_k;
        if (m) c.m = *m;
        if (lr) c.lr = *lr;
        if (steps) c.steps = *steps;
        if (batch) c.batch_size = *batch;
        if (seed) c.seed = *seed;
        if (!optimizer.empty()) c.optimizer = optimizer_from_string(optimizer);
        if (aux_k) c.aux_k = *aux_k;
        if (aux_alpha) c.aux_alpha = *aux_alpha;
        if (bias_lr_scale) c.bias_lr_scale = *bias_lr_scale;
        if (log_every) c.log_every = *log_every;
        if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
        c.workers = worker_count();
        return c;
    }
};

// Trains into run_dir: dictionary.dlct, log.jsonl, config.json, ckpt_NNNNNN.dlct.
TrainResult run_training(const fs::path& data_dir, const LabeledDataset& ds, const Manifest& manifest,
                         const TrainConfig& cfg, bool include_controls, const fs::path& run_dir, bool quiet) {
    if (!ds.provenance.centered || !ds.provenance.normalized)
        throw ValidationError("training requires a preprocessed dataset (run preprocess first)");
    fs::create_directories(run_dir);
    const json cfg_json = cfg.to_json();
    const std::string hash = config_hash(cfg_json);
    const json header = {{"config", cfg_json},
                         {"config_hash", hash},
                         {"data_checksum", manifest.x_checksum},
                         {"include_controls", include_controls}};
    write_json(run_dir / "config.json", cfg_json);

    std::ostringstream log;
    TrainCallbacks cb;
    cb.on_log = [&](const LogEntry& e) {
        log << to_json(e).dump() << "\n";
        if (!quiet)
            std::fprintf(stderr, "step %zu loss %.6f cos %.4f dead %zu resets %zu\n", e.step, e.loss, e.recon_cosine,
                         e.dead_count, e.resets);
    };
    cb.on_checkpoint = [&](std::size_t step, const Dictionary& d) {
        char name[32];
        std::snprintf(name, sizeof name, "ckpt_%06zu.dlct", step);
        json h = header;
        h["step"] = step;
        save_dictionary(run_dir / name, d, h);
    };
    auto result = train(ds, cfg, include_controls, cb);
    io::write_file_atomic(run_dir / "log.jsonl", log.str());
    json h = header;
    h["step"] = cfg.steps;
    h["final_dead_count"] = result.final_dead_count;
    save_dictionary(run_dir / "dictionary.dlct", result.dict, h);
    register_artifact(data_dir, run_dir / "dictionary.dlct", "dictionary", hash);
    return result;
}

// ---------------------------------------------------------------------------
// Encoder selection: defaults from the dictionary's training config, overridable.

struct EncodeOptions {
    std::string method;
    std::optional<std::size_t> k, j, big_k;
    bool abs_selection = false;

    void add(CLI::App* app) {
        app->add_option("--method", method, "Encoder (default: the training method)")
            ->check(CLI::IsMember({"icfl", "topk"}));
        app->add_option("--k", k, "ICFL columns per iteration");
        app->add_option("--j", j, "ICFL iterations");
        app->add_option("--K", big_k, "TopK sparsity");
        app->add_flag("--abs-selection", abs_selection, "ICFL selects by |<w, r>|");
    }

    EncoderConfig build(const json& header, const Dictionary& dict) const {
        TrainConfig base;
        if (header.contains("config")) base = TrainConfig::from_json(header["config"]);
        const Method m = method.empty() ? base.method : method_from_string(method);
        if (m == Method::icfl) {
            IcflConfig c = base.icfl;
            if (k) c.k = *k;
            if (j) c.j = *j;
            if (abs_selection) c.abs_selection = true;
            return c;
        }
        if (!dict.w_enc) throw ValidationError("TopK encoding needs a dictionary with an encoder");
        TopkConfig c = base.topk;
        if (big_k) c.big_k = *big_k;
        return c;
    }
};

json encoder_json(const EncoderConfig& enc) {
    if (const auto* i = std::get_if<IcflConfig>(&enc))
        return {{"method", "icfl"}, {"k", i->k}, {"j", i->j}, {"abs_selection", i->abs_selection}};
    return {{"method", "topk"}, {"K", std::get<TopkConfig>(enc).big_k}};
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
    bool force = false;
    std::string out;
};

void cmd_gen(const std::string& config_path, std::optional<std::uint64_t> seed, const Common& c) {
    SynthConfig cfg = SynthConfig::from_json(read_json(config_path));
    if (seed) cfg.seed = *seed;
    const fs::path dir = c.out;
    check_output(dir, c.force);
    const auto syn = generate(cfg);
    fs::create_directories(dir);
    io::save_matrix(dir / "w_true.dlmx", syn.w_true);
    io::save_codes(dir / "z_true.dlsc", std::uint32_t(cfg.m_true), syn.z_true);
    io::save_matrix(dir / "nuisance.dlmx", syn.nuisance_basis);
    Manifest m;
    m.files["w_true"] = "w_true.dlmx";
    m.files["z_true"] = "z_true.dlsc";
    m.files["nuisance"] = "nuisance.dlmx";
    m.record_stage("gen", cfg.to_json());
    save_dataset(dir, syn.data, m, true);
}

void cmd_import(const std::string& x_path, const std::string& labels_path, const std::string& groups_path,
                const Common& c) {
    LabeledDataset ds;
    ds.x = io::load_matrix(x_path);
    auto read_ints = [&](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open " + path);
        std::vector<std::int32_t> v;
        long long x;
        while (in >> x) v.push_back(std::int32_t(x));
        if (!in.eof()) throw ValidationError(path + ": expected one integer per line");
        if (v.size() != ds.x.rows()) throw ValidationError(path + ": row count does not match " + x_path);
        return v;
    };
    ds.labels = read_ints(labels_path);
    if (groups_path.empty()) {
        for (std::size_t i = 0; i < ds.size(); ++i) ds.groups.push_back(std::int32_t(i));
    } else {
        ds.groups = read_ints(groups_path);
    }
    for (auto l : ds.labels) ds.is_control.push_back(l == kControlLabel ? 1 : 0);
    Manifest m;
    m.record_stage("import", {{"x", fs::path(x_path).filename().string()}, {"rows", ds.size()}});
    save_dataset(c.out, ds, m, c.force);
}

void cmd_whiten(const std::string& data, const std::string& fit_on, float eps, const Common& c) {
    Manifest m;
    auto ds = load_dataset(data, &m);
    if (m.provenance.whitened) throw ValidationError(data + " is already whitened");
    if (m.provenance.centered) throw ValidationError("whitening must precede centering");
    check_output(c.out, c.force);
    const auto fit_rows = fit_on == "all" ? rows_for(ds, true) : ds.control_rows();
    const auto t = fit_whiten(ds.x.select_rows(fit_rows), eps);
    whiten_dataset(ds, t);
    Manifest out = derive(data, c.out, m);
    save_whiten(fs::path(c.out) / "whiten.dlct", t);
    out.files["whiten"] = "whiten.dlct";
    out.record_stage("whiten", {{"fit_on", fit_on}, {"eps", eps}, {"fit_rows", t.fit_rows}});
    save_dataset(c.out, ds, out, true);
}

void cmd_preprocess(const std::string& data, const Common& c) {
    Manifest m;
    auto ds = load_dataset(data, &m);
    if (m.provenance.centered || m.provenance.normalized) throw ValidationError(data + " is already preprocessed");
    check_output(c.out, c.force);
    const auto stats = center_normalize_dataset(ds);
    Manifest out = derive(data, c.out, m);
    io::save_matrix(fs::path(c.out) / "control_mean.dlmx", Matrix(1, stats.control_mean.size(), stats.control_mean));
    out.files["control_mean"] = "control_mean.dlmx";
    out.record_stage("preprocess", {{"center", "control_mean"}, {"normalize", "l2_row"}});
    save_dataset(c.out, ds, out, true);
}

void cmd_train(const std::string& data, const TrainOptions& opt, bool quiet, const Common& c) {
    Manifest m;
    const auto ds = load_dataset(data, &m);
    const auto cfg = opt.build();
    cfg.validate(ds.x.cols());
    check_output(c.out, c.force);
    const auto r = run_training(data, ds, m, cfg, opt.include_controls, c.out, quiet);
    if (!quiet) std::fprintf(stderr, "final dead features: %zu\n", r.final_dead_count);
}

void cmd_encode(const std::string& data, const std::string& dict_path, const EncodeOptions& opt, const Common& c) {
    const auto ds = load_dataset(data);
    json header;
    const auto dict = load_dictionary(dict_path, &header);
    if (dict.d() != ds.x.cols()) throw ValidationError("dictionary and dataset dimensions differ");
    const auto enc = opt.build(header, dict);
    check_output(c.out, c.force);
    const auto codes = encode_batch(ds.x, dict, enc, worker_count());
    io::save_codes(c.out, std::uint32_t(dict.m()), codes);
    register_artifact(data, c.out, "codes", config_hash(encoder_json(enc)));
}

struct EvalArgs {
    std::string data, codes, dict, dense, proj, truth;
    double threshold = 1e-5, activation_threshold = 0.0, tau = 0.9, test_fraction = 0.2, l2 = 1e-4;
    std::optional<double> alpha;
    bool include_controls = false, unbalanced = false, tables = false;
    std::string features = "codes";
    std::uint32_t feature = 0;
    std::int32_t label = 0;
    std::uint64_t seed = 0;
    EncodeOptions enc;
};

json eval_selectivity(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    const auto rows = ds.perturbed_rows();
    const auto codes = gather(load_codes_for(a.codes, ds), rows);
    return to_json(selectivity(codes, gather(ds.labels, rows), SelectivityConfig{a.activation_threshold}), a.tables);
}

json eval_probe(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    const auto rows = ds.perturbed_rows();
    auto [tr, te] = split_rows(ds, rows, a.test_fraction, a.seed);
    Matrix x;
    if (a.features == "codes") {
        const auto codes = load_codes_for(a.codes, ds);
        const std::uint32_t m = codes.empty() ? 0 : codes[0].dim;
        x = dense_codes(codes, m);
    } else {
        x = ds.x;
    }
    ProbeConfig cfg;
    cfg.balanced = !a.unbalanced;
    cfg.l2 = a.l2;
    const auto r = fit_probe(x.select_rows(tr), gather(ds.labels, tr), x.select_rows(te), gather(ds.labels, te), cfg);
    return {{"features", a.features},
            {"balanced_accuracy", r.balanced_accuracy},
            {"classes", r.model.classes},
            {"per_class_recall", r.per_class_recall},
            {"class_weights", r.model.class_weights},
            {"iterations", r.model.iterations},
            {"final_loss", r.model.final_loss},
            {"train_rows", tr.size()},
            {"test_rows", te.size()}};
}

json eval_recon(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    const auto rows = rows_for(ds, a.include_controls);
    json header;
    const auto dict = load_dictionary(a.dict, &header);
    const Matrix x = ds.x.select_rows(rows);
    if (!a.codes.empty()) {
        const auto codes = gather(load_codes_for(a.codes, ds), rows);
        return to_json(recon_quality(x, dict, codes));
    }
    const auto enc = a.enc.build(header, dict);
    json j = to_json(recon_quality(x, dict, enc, worker_count()));
    j["encoder"] = encoder_json(enc);
    return j;
}

json eval_dead(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    const auto codes = gather(load_codes_for(a.codes, ds), rows_for(ds, a.include_controls));
    const std::uint32_t m = codes.empty() ? 0 : codes[0].dim;
    const auto dead = dead_features(codes, m, a.threshold);
    return {{"m", m}, {"samples", codes.size()}, {"threshold", a.threshold}, {"dead_count", dead.size()}, {"dead", dead}};
}

json eval_recovery(const EvalArgs& a) {
    const auto dict = load_dictionary(a.dict);
    fs::path truth = a.truth;
    if (truth.empty()) {
        const auto m = read_manifest(a.data);
        if (!m.files.contains("w_true")) throw ValidationError(a.data + " has no ground-truth dictionary");
        truth = fs::path(a.data) / m.files["w_true"].get<std::string>();
    }
    json j = to_json(recovery_score(dict.w_dec, io::load_matrix(truth), a.tau));
    j["tau"] = a.tau;
    return j;
}

json eval_separation(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    const auto dict = load_dictionary(a.dict);
    if (a.feature >= dict.m()) throw ValidationError("--feature out of range");
    const auto rows = ds.perturbed_rows();
    const auto dir = dict.w_dec.col(a.feature);
    json j = to_json(separation(ds.x.select_rows(rows), gather(ds.labels, rows), dir, a.label));
    j["feature"] = a.feature;
    j["label"] = a.label;
    return j;
}

json eval_subspace(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    Matrix w_proj;
    if (!a.proj.empty())
        w_proj = io::load_matrix(a.proj);
    else if (!a.dict.empty())
        w_proj = load_dictionary(a.dict).w_dec;
    else
        throw ValidationError("subspace needs --proj or --dict");
    const auto [tr, te] = split_rows(ds, ds.perturbed_rows(), a.test_fraction, a.seed);
    ProbeConfig cfg;
    cfg.l2 = a.l2;
    return to_json(component_probe(ds.x.select_rows(tr), gather(ds.labels, tr), w_proj, ds.x.select_rows(te),
                                   gather(ds.labels, te), a.seed, cfg));
}

json eval_cp_compare(const EvalArgs& a) {
    const auto ds = load_dataset(a.data);
    const auto rows = ds.perturbed_rows();
    const Matrix dense = (a.dense.empty() ? ds.x : io::load_matrix(a.dense));
    if (dense.rows() != ds.size()) throw ValidationError("--dense row count does not match the dataset");
    const auto codes = gather(load_codes_for(a.codes, ds), rows);
    const Matrix feats = dense.select_rows(rows);
    double alpha;
    if (a.alpha) {
        alpha = *a.alpha;
    } else {
        double nnz = 0.0;
        for (const auto& c : codes) nnz += double(c.nnz());
        alpha = solve_alpha(feats, nnz / double(std::max<std::size_t>(1, codes.size())));
    }
    return to_json(cp_compare(feats, codes, gather(ds.labels, rows), alpha));
}

json cmd_rank(const std::string& data, const std::string& dict_path, std::uint32_t feature, std::size_t top,
              int sign) {
    const auto ds = load_dataset(data);
    const auto dict = load_dictionary(dict_path);
    if (feature >= dict.m()) throw ValidationError("--feature out of range");
    const auto dir = dict.w_dec.col(feature);
    json rows = json::array();
    std::size_t rank = 0;
    for (auto i : rank_samples(ds.x, dir, top, sign))
        rows.push_back({{"rank", ++rank},
                        {"sample", i},
                        {"cosine", cosine(ds.x.row(i), dir)},
                        {"label", ds.labels[i]},
                        {"group", ds.groups[i]}});
    return {{"feature", feature}, {"sign", sign}, {"rows", rows}};
}

void cmd_sweep(const std::string& data, const TrainOptions& opt, const std::string& vary,
               const std::vector<double>& values, bool quiet, const Common& c) {
    Manifest m;
    const auto ds = load_dataset(data, &m);
    const auto base = opt.build();
    check_output(c.out, c.force);
    fs::create_directories(c.out);
    const Matrix eval_x = ds.x.select_rows(rows_for(ds, opt.include_controls));
    json runs = json::array();
    for (std::size_t r = 0; r < values.size(); ++r) {
        TrainConfig cfg = base;
        const double v = values[r];
        if (vary == "lr") {
            cfg.lr = float(v);
        } else {
            const auto budget = std::size_t(v);
            if (double(budget) != v || budget == 0) throw ValidationError("sparsity values must be positive integers");
            if (cfg.method == Method::topk) {
                cfg.topk.big_k = budget;
            } else {
                if (budget % cfg.icfl.k != 0)
                    throw ValidationError("ICFL budget " + std::to_string(budget) + " is not a multiple of k");
                cfg.icfl.j = budget / cfg.icfl.k;
            }
        }
        cfg.validate(ds.x.cols());
        char name[32];
        std::snprintf(name, sizeof name, "run_%03zu", r);
        const fs::path run_dir = fs::path(c.out) / name;
        check_output(run_dir, c.force);
        const auto res = run_training(data, ds, m, cfg, opt.include_controls, run_dir, quiet);
        const EncoderConfig enc = cfg.method == Method::icfl ? EncoderConfig{cfg.icfl} : EncoderConfig{cfg.topk};
        const auto rq = recon_quality(eval_x, res.dict, enc, worker_count());
        json entry = {{"value", v},
                      {"run", name},
                      {"config_hash", config_hash(cfg.to_json())},
                      {"budget", cfg.budget()},
                      {"recon", to_json(rq)},
                      {"final_dead_count", res.final_dead_count},
                      {"final_loss", res.log.empty() ? 0.0 : res.log.back().loss}};
        write_json(run_dir / "report.json", entry);
        runs.push_back(entry);
    }
    write_json(fs::path(c.out) / "sweep.json",
               {{"vary", vary}, {"method", to_string(base.method)}, {"values", values}, {"runs", runs}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse dictionary learning toolkit"};
    app.require_subcommand(1);
    Common common;
    auto add_out = [&](CLI::App* sub, const char* what, bool required) {
        auto* o = sub->add_option("--out", common.out, what);
        if (required) o->required();
        sub->add_flag("--force", common.force, "Overwrite existing outputs");
    };

    std::string config, data, dict, fit_on = "control", x_path, labels_path, groups_path;
    std::optional<std::uint64_t> seed;
    float eps = kDefaultWhitenEps;
    bool quiet = false;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    gen->add_option("--config", config, "Synth config JSON (schema_version 1)")->required()->check(CLI::ExistingFile);
    gen->add_option("--seed", seed, "Override the config seed");
    add_out(gen, "Dataset directory", true);

    auto* imp = app.add_subcommand("import", "Wrap a DLMX matrix and label file as a dataset");
    imp->add_option("--x", x_path, "Representations (DLMX)")->required()->check(CLI::ExistingFile);
    imp->add_option("--labels", labels_path, "One integer label per line; -1 marks controls")
        ->required()
        ->check(CLI::ExistingFile);
    imp->add_option("--groups", groups_path, "One integer group id per line (default: row index)")
        ->check(CLI::ExistingFile);
    add_out(imp, "Dataset directory", true);

    auto* wh = app.add_subcommand("whiten", "Fit PCA whitening on controls and apply it");
    wh->add_option("--data", data, "Input dataset")->required()->check(CLI::ExistingDirectory);
    wh->add_option("--fit-on", fit_on, "Rows used for the fit")->check(CLI::IsMember({"control", "all"}));
    wh->add_option("--eps", eps, "Eigenvalue floor");
    add_out(wh, "Output dataset directory", true);

    auto* pre = app.add_subcommand("preprocess", "Center on the control mean and l2-normalize rows");
    pre->add_option("--data", data, "Input dataset")->required()->check(CLI::ExistingDirectory);
    add_out(pre, "Output dataset directory", true);

    TrainOptions topt;
    auto* tr = app.add_subcommand("train", "Train a dictionary");
    tr->add_option("--data", data, "Preprocessed dataset")->required()->check(CLI::ExistingDirectory);
    topt.add(tr);
    tr->add_flag("--quiet", quiet, "No progress on stderr");
    add_out(tr, "Run directory", true);

    EncodeOptions eopt;
    auto* enc = app.add_subcommand("encode", "Encode a dataset with a trained dictionary");
    enc->add_option("--data", data, "Dataset")->required()->check(CLI::ExistingDirectory);
    enc->add_option("--dict", dict, "Dictionary container")->required()->check(CLI::ExistingFile);
    eopt.add(enc);
    add_out(enc, "Codes file (DLSC)", true);

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluation reports (JSON)");
    ev->require_subcommand(1);
    auto eval_sub = [&](const char* name, const char* what) {
        auto* s = ev->add_subcommand(name, what);
        s->add_option("--data", ea.data, "Dataset")->required()->check(CLI::ExistingDirectory);
        add_out(s, "Report path (default: stdout)", false);
        return s;
    };
    auto* e_sel = eval_sub("selectivity", "Per-feature label selectivity");
    e_sel->add_option("--codes", ea.codes, "Codes (DLSC)")->required()->check(CLI::ExistingFile);
    e_sel->add_option("--activation-threshold", ea.activation_threshold, "Active iff |value| > threshold");
    e_sel->add_flag("--tables", ea.tables, "Include the full m x L tables");
    auto* e_probe = eval_sub("probe", "Balanced logistic-regression probe on a group holdout");
    e_probe->add_option("--features", ea.features, "codes or x")->check(CLI::IsMember({"codes", "x"}));
    e_probe->add_option("--codes", ea.codes, "Codes (DLSC)")->check(CLI::ExistingFile);
    e_probe->add_option("--test-fraction", ea.test_fraction, "Fraction of groups held out");
    e_probe->add_option("--seed", ea.seed, "Split seed");
    e_probe->add_option("--l2", ea.l2, "Weight decay");
    e_probe->add_flag("--unbalanced", ea.unbalanced, "Plain cross-entropy");
    auto* e_recon = eval_sub("recon", "Reconstruction cosine and l2 error");
    e_recon->add_option("--dict", ea.dict, "Dictionary")->required()->check(CLI::ExistingFile);
    e_recon->add_option("--codes", ea.codes, "Use these codes instead of encoding")->check(CLI::ExistingFile);
    e_recon->add_flag("--include-controls", ea.include_controls, "Evaluate control rows too");
    ea.enc.add(e_recon);
    auto* e_dead = eval_sub("dead", "Features active on fewer than threshold * samples");
    e_dead->add_option("--codes", ea.codes, "Codes (DLSC)")->required()->check(CLI::ExistingFile);
    e_dead->add_option("--threshold", ea.threshold, "Activation fraction");
    e_dead->add_flag("--include-controls", ea.include_controls, "Count control rows too");
    auto* e_rec = eval_sub("recovery", "Ground-truth atom recovery");
    e_rec->add_option("--dict", ea.dict, "Dictionary")->required()->check(CLI::ExistingFile);
    e_rec->add_option("--truth", ea.truth, "True dictionary (default: the dataset's w_true)")->check(CLI::ExistingFile);
    e_rec->add_option("--tau", ea.tau, "Cosine threshold");
    auto* e_sep = eval_sub("separation", "Cosine histograms and Mann-Whitney test for one feature");
    e_sep->add_option("--dict", ea.dict, "Dictionary")->required()->check(CLI::ExistingFile);
    e_sep->add_option("--feature", ea.feature, "Feature index")->required();
    e_sep->add_option("--label", ea.label, "Target label")->required();
    auto* e_sub = eval_sub("subspace", "Row/null-space component probing");
    e_sub->add_option("--proj", ea.proj, "Projection matrix d_e x d_d (DLMX)")->check(CLI::ExistingFile);
    e_sub->add_option("--dict", ea.dict, "Use the decoder as the projection")->check(CLI::ExistingFile);
    e_sub->add_option("--test-fraction", ea.test_fraction, "Fraction of groups held out");
    e_sub->add_option("--seed", ea.seed, "Split and random-subspace seed");
    e_sub->add_option("--l2", ea.l2, "Weight decay");
    auto* e_cp = eval_sub("cp-compare", "Quantile-sparsified dense features vs codes");
    e_cp->add_option("--codes", ea.codes, "Codes (DLSC)")->required()->check(CLI::ExistingFile);
    e_cp->add_option("--dense", ea.dense, "Dense features (default: dataset x)")->check(CLI::ExistingFile);
    e_cp->add_option("--alpha", ea.alpha, "Quantile level (default: match the codes' mean nnz)");

    std::uint32_t rank_feature = 0;
    std::size_t rank_top = 10;
    int rank_sign = 1;
    auto* rk = app.add_subcommand("rank", "Samples ranked by cosine with a feature direction");
    rk->add_option("--data", data, "Dataset")->required()->check(CLI::ExistingDirectory);
    rk->add_option("--dict", dict, "Dictionary")->required()->check(CLI::ExistingFile);
    rk->add_option("--feature", rank_feature, "Feature index")->required();
    rk->add_option("--top", rank_top, "Rows to list");
    rk->add_option("--sign", rank_sign, "1: most aligned, -1: most anti-aligned")->check(CLI::IsMember({1, -1}));
    add_out(rk, "Report path (default: stdout)", false);

    TrainOptions sopt;
    std::string vary;
    std::vector<double> values;
    auto* sw = app.add_subcommand("sweep", "Train one dictionary per sparsity budget or learning rate");
    sw->add_option("--data", data, "Preprocessed dataset")->required()->check(CLI::ExistingDirectory);
    sw->add_option("--vary", vary, "Swept quantity")->required()->check(CLI::IsMember({"sparsity", "lr"}));
    sw->add_option("--values", values, "Values (sparsity: total budgets)")->required()->delimiter(',');
    sopt.add(sw);
    sw->add_flag("--quiet", quiet, "No progress on stderr");
    add_out(sw, "Sweep directory", true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) cmd_gen(config, seed, common);
        else if (imp->parsed()) cmd_import(x_path, labels_path, groups_path, common);
        else if (wh->parsed()) cmd_whiten(data, fit_on, eps, common);
        else if (pre->parsed()) cmd_preprocess(data, common);
        else if (tr->parsed()) cmd_train(data, topt, quiet, common);
        else if (enc->parsed()) cmd_encode(data, dict, eopt, common);
        else if (rk->parsed()) emit(common.out, common.force, cmd_rank(data, dict, rank_feature, rank_top, rank_sign));
        else if (sw->parsed()) cmd_sweep(data, sopt, vary, values, quiet, common);
        else if (ev->parsed()) {
            json report;
            if (e_sel->parsed()) report = eval_selectivity(ea);
            else if (e_probe->parsed()) {
                if (ea.features == "codes" && ea.codes.empty()) throw ValidationError("probe on codes needs --codes");
                report = eval_probe(ea);
            } else if (e_recon->parsed()) report = eval_recon(ea);
            else if (e_dead->parsed()) report = eval_dead(ea);
            else if (e_rec->parsed()) report = eval_recovery(ea);
            else if (e_sep->parsed()) report = eval_separation(ea);
            else if (e_sub->parsed()) report = eval_subspace(ea);
            else report = eval_cp_compare(ea);
            emit(common.out, common.force, report);
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "dlkit: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "dlkit: numerical divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "dlkit: %s\n", e.what());
        return 1;
    }
    return 0;
}
