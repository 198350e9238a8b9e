#include "dlkit/manifest.hpp"

#include <cstdio>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "dlkit/io.hpp"

namespace dlkit {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kCoreFiles[] = {"x.dlmx", "labels.dlmx", "groups.dlmx", "control.dlmx"};

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

bool is_core(const std::string& name) {
    for (const char* f : kCoreFiles)
        if (name == f) return true;
    return false;
}

class FileLock {
public:
    explicit FileLock(const fs::path& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw Error("cannot lock " + path.string());
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

void write_manifest(const fs::path& dir, const Manifest& m) {
    io::write_file_atomic(dir / kManifestFile, m.to_json().dump(2) + "\n");
}

}  // namespace

std::string config_hash(const nlohmann::json& config) { return hex(io::fnv1a(config.dump())); }

void Manifest::record_stage(const std::string& stage, const nlohmann::json& config) {
    if (configs.contains(stage)) throw ValidationError("stage '" + stage + "' already applied");
    configs[stage] = config;
    config_hashes[stage] = config_hash(config);
    if (config.is_object() && config.contains("seed")) seeds[stage] = config["seed"];
    history.push_back(stage);
}

nlohmann::json Manifest::to_json() const {
    return {{"schema_version", 1},
            {"kind", "dataset"},
            {"rows", rows},
            {"dim", dim},
            {"x_checksum", x_checksum},
            {"provenance",
             {{"whitened", provenance.whitened},
              {"centered", provenance.centered},
              {"normalized", provenance.normalized}}},
            {"files", files},
            {"seeds", seeds},
            {"configs", configs},
            {"config_hashes", config_hashes},
            {"history", history},
            {"artifacts", artifacts}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    try {
        if (j.at("schema_version") != 1 || j.at("kind") != "dataset")
            throw ValidationError("unsupported manifest");
        m.rows = j.at("rows");
        m.dim = j.at("dim");
        m.x_checksum = j.at("x_checksum");
        const auto& p = j.at("provenance");
        m.provenance = {p.at("whitened"), p.at("centered"), p.at("normalized")};
        m.files = j.at("files");
        m.seeds = j.value("seeds", nlohmann::json::object());
        m.configs = j.at("configs");
        m.config_hashes = j.at("config_hashes");
        m.history = j.at("history");
        m.artifacts = j.value("artifacts", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
    for (const auto& [stage, cfg] : m.configs.items())
        if (!m.config_hashes.contains(stage) || m.config_hashes[stage] != config_hash(cfg))
            throw ValidationError("manifest config hash mismatch for stage '" + stage + "'");
    return m;
}

Manifest read_manifest(const fs::path& dir) {
    const auto path = dir / kManifestFile;
    if (!fs::exists(path)) throw ValidationError("no manifest in " + dir.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return Manifest::from_json(j);
}

void check_output(const fs::path& path, bool force) {
    if (force || !fs::exists(path)) return;
    if (fs::is_directory(path) && fs::is_empty(path)) return;
    throw ValidationError(path.string() + " exists; pass --force to overwrite");
}

void save_dataset(const fs::path& dir, const LabeledDataset& ds, Manifest manifest, bool force) {
    ds.validate();
    check_output(dir, force);
    fs::create_directories(dir);
    std::vector<std::int32_t> control(ds.is_control.begin(), ds.is_control.end());
    io::save_matrix(dir / "x.dlmx", ds.x);
    io::save_matrix(dir / "labels.dlmx", io::column_from_ints(ds.labels));
    io::save_matrix(dir / "groups.dlmx", io::column_from_ints(ds.groups));
    io::save_matrix(dir / "control.dlmx", io::column_from_ints(control));
    manifest.rows = ds.size();
    manifest.dim = ds.x.cols();
    manifest.x_checksum = hex(io::checksum(ds.x));
    manifest.provenance = ds.provenance;
    manifest.files["x"] = "x.dlmx";
    manifest.files["labels"] = "labels.dlmx";
    manifest.files["groups"] = "groups.dlmx";
    manifest.files["control"] = "control.dlmx";
    for (const auto& [role, name] : manifest.files.items())
        if (!is_core(name) && !fs::exists(dir / name.get<std::string>()))
            throw ValidationError("manifest lists missing file " + name.get<std::string>());
    write_manifest(dir, manifest);
}

LabeledDataset load_dataset(const fs::path& dir, Manifest* out) {
    Manifest m = read_manifest(dir);
    LabeledDataset ds;
    ds.x = io::load_matrix(dir / "x.dlmx");
    ds.labels = io::ints_from_column(io::load_matrix(dir / "labels.dlmx"));
    ds.groups = io::ints_from_column(io::load_matrix(dir / "groups.dlmx"));
    for (auto v : io::ints_from_column(io::load_matrix(dir / "control.dlmx")))
        ds.is_control.push_back(v ? 1 : 0);
    ds.provenance = m.provenance;
    ds.validate();
    if (ds.size() != m.rows || ds.x.cols() != m.dim) throw ValidationError(dir.string() + ": shape disagrees with manifest");
    if (hex(io::checksum(ds.x)) != m.x_checksum) throw ValidationError(dir.string() + ": x checksum mismatch");
    if (out) *out = std::move(m);
    return ds;
}

void update_manifest(const fs::path& dir, const std::function<void(Manifest&)>& fn) {
    FileLock lock(dir / "manifest.lock");
    Manifest m = read_manifest(dir);
    const Provenance before = m.provenance;
    fn(m);
    if ((before.whitened && !m.provenance.whitened) || (before.centered && !m.provenance.centered) ||
        (before.normalized && !m.provenance.normalized))
        throw ValidationError("provenance flags cannot be cleared");
    write_manifest(dir, m);
}

}  // namespace dlkit
