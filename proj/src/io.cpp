#include "dlkit/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace dlkit::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

constexpr char kMatrixMagic[4] = {'D', 'L', 'M', 'X'};
constexpr char kCodesMagic[4] = {'D', 'L', 'S', 'C'};
constexpr char kContainerMagic[4] = {'D', 'L', 'C', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ValidationError("unexpected end of file");
    return v;
}

void expect_magic(std::istream& in, const char (&magic)[4], const char* what) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        throw ValidationError(std::string("bad magic: not a ") + what + " file");
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
    out.write(kMatrixMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, kDtypeF32);
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(float)));
}

Matrix read_matrix(std::istream& in) {
    expect_magic(in, kMatrixMagic, "DLMX");
    if (get<std::uint32_t>(in) != kVersion) throw ValidationError("unsupported DLMX version");
    if (get<std::uint32_t>(in) != kDtypeF32) throw ValidationError("unsupported DLMX dtype");
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (cols != 0 && rows > (std::uint64_t(1) << 40) / cols)
        throw ValidationError("DLMX shape too large");
    std::vector<float> data(rows * cols);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * sizeof(float)));
    if (!in) throw ValidationError("truncated DLMX payload");
    Matrix m(rows, cols, std::move(data));
    if (!m.all_finite()) throw ValidationError("DLMX contains non-finite values");
    return m;
}

std::string encode_matrix(const Matrix& m) {
    std::ostringstream out(std::ios::binary);
    write_matrix(out, m);
    return std::move(out).str();
}

Matrix decode_matrix(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    return read_matrix(in);
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    write_file_atomic(path, encode_matrix(m));
}

Matrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return read_matrix(in);
}

void write_codes(std::ostream& out, std::uint32_t dim, const std::vector<SparseCode>& codes) {
    out.write(kCodesMagic, 4);
    put<std::uint64_t>(out, codes.size());
    put<std::uint64_t>(out, dim);
    for (const auto& c : codes) {
        if (c.dim != dim) throw ValidationError("code dim mismatch in batch");
        put<std::uint32_t>(out, std::uint32_t(c.entries.size()));
        for (const auto& e : c.entries) {
            put<std::uint32_t>(out, e.index);
            put<float>(out, e.value);
        }
    }
}

std::vector<SparseCode> read_codes(std::istream& in) {
    expect_magic(in, kCodesMagic, "DLSC");
    const auto n = get<std::uint64_t>(in);
    const auto dim = get<std::uint64_t>(in);
    if (dim > 0xffffffffull) throw ValidationError("DLSC dim too large");
    std::vector<SparseCode> codes;
    codes.reserve(std::size_t(std::min<std::uint64_t>(n, 1u << 24)));
    for (std::uint64_t i = 0; i < n; ++i) {
        SparseCode c{std::uint32_t(dim), {}};
        const auto count = get<std::uint32_t>(in);
        if (count > dim) throw ValidationError("DLSC entry count exceeds dim");
        c.entries.resize(count);
        for (auto& e : c.entries) {
            e.index = get<std::uint32_t>(in);
            e.value = get<float>(in);
            if (!std::isfinite(e.value)) throw ValidationError("DLSC contains non-finite values");
        }
        c.validate();
        codes.push_back(std::move(c));
    }
    return codes;
}

void save_codes(const std::filesystem::path& path, std::uint32_t dim,
                const std::vector<SparseCode>& codes) {
    std::ostringstream out(std::ios::binary);
    write_codes(out, dim, codes);
    write_file_atomic(path, std::move(out).str());
}

std::vector<SparseCode> load_codes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return read_codes(in);
}

void save_container(const std::filesystem::path& path, const Container& c) {
    json header = c.header;
    json sections = json::array();
    std::string payload;
    for (const auto& [name, m] : c.sections) {
        std::string blob = encode_matrix(m);
        sections.push_back({{"name", name}, {"offset", payload.size()}, {"bytes", blob.size()}});
        payload += blob;
    }
    header["sections"] = sections;
    const std::string text = header.dump();

    std::ostringstream out(std::ios::binary);
    out.write(kContainerMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out << text << payload;
    write_file_atomic(path, std::move(out).str());
}

Container load_container(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes, std::ios::binary);
    expect_magic(in, kContainerMagic, "DLCT");
    if (get<std::uint32_t>(in) != kVersion) throw ValidationError("unsupported DLCT version");
    const auto len = get<std::uint64_t>(in);
    const std::size_t base = 16 + len;
    if (base > bytes.size()) throw ValidationError("truncated DLCT header");
    Container c;
    try {
        c.header = json::parse(bytes.substr(16, len));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad DLCT header: ") + e.what());
    }
    for (const auto& s : c.header.at("sections")) {
        const std::size_t off = s.at("offset"), n = s.at("bytes");
        if (base + off + n > bytes.size()) throw ValidationError("truncated DLCT section");
        c.sections.emplace(s.at("name").get<std::string>(), decode_matrix(bytes.substr(base + off, n)));
    }
    c.header.erase("sections");
    return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw ValidationError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t checksum(const Matrix& m) { return fnv1a(encode_matrix(m)); }

Matrix column_from_ints(const std::vector<std::int32_t>& v) {
    Matrix m(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) >= (1 << 24)) throw ValidationError("integer too large for f32 column");
        m(i, 0) = float(v[i]);
    }
    return m;
}

std::vector<std::int32_t> ints_from_column(const Matrix& m) {
    if (m.cols() != 1) throw ValidationError("expected an n x 1 column");
    std::vector<std::int32_t> v(m.rows());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float f = m(i, 0);
        if (f != std::floor(f)) throw ValidationError("non-integer value in integer column");
        v[i] = std::int32_t(f);
    }
    return v;
}

}  // namespace dlkit::io
