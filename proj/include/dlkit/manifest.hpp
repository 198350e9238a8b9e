#pragma once

// On-disk dataset directories and their manifest.
//
//   DIR/manifest.json   provenance flags, seeds, stage configs with hashes, file table
//   DIR/x.dlmx          representations (n x d)
//   DIR/labels.dlmx     int columns (n x 1), see io::column_from_ints
//   DIR/groups.dlmx
//   DIR/control.dlmx
//
// Synthetic datasets add w_true.dlmx, z_true.dlsc and nuisance.dlmx; derived datasets carry
// such extra files over unchanged.

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "dlkit/dataset.hpp"

namespace dlkit {

// Hex FNV-1a of the compact JSON dump (object keys sorted).
std::string config_hash(const nlohmann::json& config);

struct Manifest {
    Provenance provenance;
    std::size_t rows = 0, dim = 0;
    std::string x_checksum;
    nlohmann::json files = nlohmann::json::object();      // role -> file name inside the directory
    nlohmann::json seeds = nlohmann::json::object();      // stage -> seed
    nlohmann::json configs = nlohmann::json::object();    // stage -> config
    nlohmann::json config_hashes = nlohmann::json::object();
    nlohmann::json history = nlohmann::json::array();     // stage names in order applied
    nlohmann::json artifacts = nlohmann::json::object();  // relative path -> {kind, config_hash}

    // Stores the config under `stage` and appends to history; a stage may run once.
    void record_stage(const std::string& stage, const nlohmann::json& config);

    nlohmann::json to_json() const;
    // Rejects stored configs whose hash does not match.
    static Manifest from_json(const nlohmann::json& j);
};

Manifest read_manifest(const std::filesystem::path& dir);

// Writes the dataset files and the manifest. Refuses a non-empty directory unless force.
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds, Manifest manifest,
                  bool force = false);
// Loads and cross-checks a dataset directory (row count, checksum, provenance).
LabeledDataset load_dataset(const std::filesystem::path& dir, Manifest* manifest = nullptr);

// Read-modify-write of DIR/manifest.json under an exclusive advisory lock. Provenance flags may
// only go from false to true.
void update_manifest(const std::filesystem::path& dir, const std::function<void(Manifest&)>& fn);

// Refuses an existing output path unless force.
void check_output(const std::filesystem::path& path, bool force);

}  // namespace dlkit
