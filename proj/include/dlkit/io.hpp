#pragma once

// Binary formats shared by all modules.
//
//   DLMX  "DLMX" u32 version=1 u32 dtype=1 u64 rows u64 cols, then rows*cols f32 LE row-major.
//   DLSC  "DLSC" u64 n u64 M, then per sample u32 count followed by (u32 idx, f32 val) pairs.
//   DLCT  "DLCT" u32 version=1 u64 header_len, JSON header, then the DLMX sections it lists
//         as {"name", "offset", "bytes"} with offsets relative to the end of the header.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlkit/core.hpp"

namespace dlkit::io {

using json = nlohmann::json;

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
std::string encode_matrix(const Matrix& m);
Matrix decode_matrix(const std::string& bytes);

void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

void write_codes(std::ostream& out, std::uint32_t dim, const std::vector<SparseCode>& codes);
std::vector<SparseCode> read_codes(std::istream& in);
void save_codes(const std::filesystem::path& path, std::uint32_t dim,
                const std::vector<SparseCode>& codes);
std::vector<SparseCode> load_codes(const std::filesystem::path& path);

// Named DLMX sections plus a free-form JSON header.
struct Container {
    json header = json::object();
    std::map<std::string, Matrix> sections;
};

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// FNV-1a over the DLMX encoding.
std::uint64_t checksum(const Matrix& m);
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed = 14695981039346656037ull);

// Vectors of integers stored as n x 1 DLMX (exact for |v| < 2^24).
Matrix column_from_ints(const std::vector<std::int32_t>& v);
std::vector<std::int32_t> ints_from_column(const Matrix& m);

}  // namespace dlkit::io
