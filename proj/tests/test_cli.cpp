#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <sys/wait.h>
#include <unistd.h>

#include "dlkit/io.hpp"
#include "dlkit/manifest.hpp"
#include "dlkit/synth.hpp"
#include "dlkit/training.hpp"

using namespace dlkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dlkit_cli_" + std::to_string(::getpid()) + "_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
    const std::string cmd = std::string(DLKIT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(io::read_file(p)); }

void small_synth(const fs::path& path) {
    SynthConfig c;
    c.d = 8;
    c.m_true = 12;
    c.s = 2;
    c.n = 400;
    c.n_control = 80;
    c.labels = 3;
    c.nuisance_dims = 2;
    c.seed = 3;
    io::write_file_atomic(path, c.to_json().dump());
}

}  // namespace

TEST_CASE("manifest stages and hashes") {
    Manifest m;
    m.record_stage("gen", {{"seed", 4}, {"d", 8}});
    CHECK(m.seeds["gen"] == 4);
    CHECK(m.config_hashes["gen"] == config_hash({{"d", 8}, {"seed", 4}}));
    CHECK_THROWS_AS(m.record_stage("gen", {}), ValidationError);
    auto j = m.to_json();
    CHECK(Manifest::from_json(j).history == m.history);
    j["configs"]["gen"]["d"] = 9;
    CHECK_THROWS_WITH_AS(Manifest::from_json(j), "manifest config hash mismatch for stage 'gen'", ValidationError);
}

TEST_CASE("dataset directories round trip and guard provenance") {
    TempDir tmp;
    LabeledDataset ds;
    ds.x = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    ds.labels = {0, 1, kControlLabel};
    ds.groups = {0, 0, 1};
    ds.is_control = {0, 0, 1};
    ds.provenance.whitened = true;
    save_dataset(tmp.path / "d", ds, Manifest{});
    Manifest m;
    const auto back = load_dataset(tmp.path / "d", &m);
    CHECK(back.x == ds.x);
    CHECK(back.labels == ds.labels);
    CHECK(back.is_control == ds.is_control);
    CHECK(back.provenance == ds.provenance);
    CHECK(m.rows == 3);

    CHECK_THROWS_AS(save_dataset(tmp.path / "d", ds, Manifest{}), ValidationError);
    CHECK_THROWS_AS(update_manifest(tmp.path / "d", [](Manifest& mm) { mm.provenance.whitened = false; }),
                    ValidationError);
    update_manifest(tmp.path / "d", [](Manifest& mm) { mm.artifacts["a"] = 1; });
    CHECK(read_manifest(tmp.path / "d").artifacts["a"] == 1);

    // Tampered data is caught by the checksum.
    io::save_matrix(tmp.path / "d" / "x.dlmx", Matrix(3, 2, 0.0f));
    CHECK_THROWS_AS(load_dataset(tmp.path / "d"), ValidationError);
}

TEST_CASE("train config json") {
    auto c = TrainConfig::desk_preset(Method::topk);
    c.seed = 11;
    const auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    auto j = c.to_json();
    j["learning_rate"] = 1;
    CHECK_THROWS_AS(TrainConfig::from_json(j), ValidationError);
    CHECK(TrainConfig::from_json({{"schema_version", 1}, {"steps", 5}}).steps == 5);
    CHECK_THROWS_AS(TrainConfig::from_json({{"steps", 5}}), ValidationError);
}

TEST_CASE("dictionary containers") {
    TempDir tmp;
    auto d = init_dictionary(4, 6, 2, true);
    save_dictionary(tmp.path / "d.dlct", d, {{"step", 7}});
    nlohmann::json h;
    CHECK(load_dictionary(tmp.path / "d.dlct", &h) == d);
    CHECK(h["step"] == 7);
    CHECK(h["kind"] == "dictionary");
}

TEST_CASE("cli: argument and provenance errors exit with 2") {
    TempDir tmp;
    const auto dir = tmp.path.string();
    small_synth(tmp.path / "synth.json");
    CHECK(run("bogus") == 2);
    CHECK(run("train --data " + dir + "/missing --out x") == 2);
    REQUIRE(run("gen --config " + dir + "/synth.json --out " + dir + "/raw") == 0);
    CHECK(run("gen --config " + dir + "/synth.json --out " + dir + "/raw") == 2);
    CHECK(run("gen --config " + dir + "/synth.json --out " + dir + "/raw --force") == 0);
    REQUIRE(run("whiten --data " + dir + "/raw --out " + dir + "/w") == 0);
    CHECK(run("whiten --data " + dir + "/w --out " + dir + "/w2") == 2);
    REQUIRE(run("preprocess --data " + dir + "/w --out " + dir + "/p") == 0);
    CHECK(run("preprocess --data " + dir + "/p --out " + dir + "/p2") == 2);
    CHECK(run("whiten --data " + dir + "/p --out " + dir + "/w3") == 2);
    // Training needs centered and normalized data.
    CHECK(run("train --data " + dir + "/raw --out " + dir + "/r --steps 1 --quiet") == 2);
    CHECK(run("train --data " + dir + "/p --out " + dir + "/r --steps 1 --k 99 --quiet") == 2);
    CHECK(run("train --data " + dir + "/p --out " + dir + "/r --lr 1e30 --steps 50 --m 16 --quiet") == 3);
}

TEST_CASE("cli: untrained passthrough and the desk pipeline") {
    TempDir tmp;
    const auto dir = tmp.path.string();
    small_synth(tmp.path / "synth.json");
    REQUIRE(run("gen --config " + dir + "/synth.json --out " + dir + "/raw") == 0);
    REQUIRE(run("preprocess --data " + dir + "/raw --out " + dir + "/p") == 0);

    REQUIRE(run("train --data " + dir + "/p --out " + dir + "/r0 --steps 0 --m 16 --quiet") == 0);
    REQUIRE(run("encode --data " + dir + "/p --dict " + dir + "/r0/dictionary.dlct --out " + dir + "/c0.dlsc") == 0);
    const auto dict = load_dictionary(tmp.path / "r0" / "dictionary.dlct");
    const auto codes = io::load_codes(tmp.path / "c0.dlsc");
    const auto ds = load_dataset(tmp.path / "p");
    REQUIRE(codes.size() == ds.size());
    for (auto b : dict.b_pre) CHECK(b == 0.0f);
    for (const auto& c : codes) c.validate();
    REQUIRE(run("eval recon --data " + dir + "/p --dict " + dir + "/r0/dictionary.dlct --codes " + dir +
                "/c0.dlsc --out " + dir + "/recon0.json") == 0);
    CHECK(load_json(tmp.path / "recon0.json")["mean_cosine"].get<double>() > 0.0);

    REQUIRE(run("train --data " + dir + "/p --out " + dir + "/r --steps 300 --m 24 --log-every 100 "
                "--checkpoint-every 200 --quiet") == 0);
    CHECK(fs::exists(tmp.path / "r" / "ckpt_000200.dlct"));
    CHECK(fs::exists(tmp.path / "r" / "config.json"));
    CHECK(io::read_file(tmp.path / "r" / "log.jsonl").find("\"step\":300") != std::string::npos);
    REQUIRE(run("eval recovery --data " + dir + "/p --dict " + dir + "/r/dictionary.dlct --out " + dir +
                "/rec.json") == 0);
    const double score = load_json(tmp.path / "rec.json")["fraction"];
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
    CHECK(read_manifest(tmp.path / "p").artifacts.contains("../r/dictionary.dlct"));

    REQUIRE(run("encode --data " + dir + "/p --dict " + dir + "/r/dictionary.dlct --out " + dir + "/c.dlsc") == 0);
    for (const char* sub : {"selectivity", "dead", "cp-compare"})
        CHECK(run(std::string("eval ") + sub + " --data " + dir + "/p --codes " + dir + "/c.dlsc --out " + dir +
                  "/" + sub + ".json") == 0);
    CHECK(run("eval probe --data " + dir + "/p --codes " + dir + "/c.dlsc --out " + dir + "/probe.json") == 0);
    CHECK(run("eval separation --data " + dir + "/p --dict " + dir + "/r/dictionary.dlct --feature 0 --label 1") ==
          0);
    CHECK(run("eval subspace --data " + dir + "/p --dict " + dir + "/r/dictionary.dlct") == 2);  // d_d > d_e
    CHECK(run("rank --data " + dir + "/p --dict " + dir + "/r/dictionary.dlct --feature 3 --top 5 --out " + dir +
              "/rank.json") == 0);
    CHECK(load_json(tmp.path / "rank.json")["rows"].size() == 5);
    CHECK(run("sweep --data " + dir + "/p --out " + dir + "/sw --vary sparsity --values 5,10 --k 5 --steps 50 "
              "--m 16 --quiet") == 0);
    CHECK(load_json(tmp.path / "sw" / "sweep.json")["runs"].size() == 2);
    CHECK(run("sweep --data " + dir + "/p --out " + dir + "/sw2 --vary sparsity --values 7 --k 5 --steps 5 "
              "--quiet") == 2);
}
