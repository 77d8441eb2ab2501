#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "rntk/errors.hpp"
#include "rntk/kernel.hpp"
#include "rntk/params.hpp"

namespace rntk {

enum class KernelKind : std::uint8_t { CK = 0, NTK = 1 };

/// Contents of one binary Gram file.
///
/// Layout, all little-endian:
///   8 bytes  magic "RNTKGRAM"
///   u32      version (1)
///   u32      rows
///   u32      cols
///   u8       kind (0 CK, 1 NTK)
///   u8       variant code (see Variant::code)
///   u16      reserved, zero
///   f64 * rows * cols, row-major
struct GramFile {
    std::uint32_t version = 1;
    KernelKind kind = KernelKind::CK;
    std::uint8_t variant_code = 0;
    Matrix values;
};

inline constexpr std::array<char, 8> kGramMagic{'R', 'N', 'T', 'K', 'G', 'R', 'A', 'M'};
inline constexpr std::uint32_t kGramVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <class T>
T get_le(const unsigned char* in) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(in[i]) << (8 * i);
    return value;
}

}  // namespace detail

inline std::vector<unsigned char> encode_gram(const Matrix& values, KernelKind kind, std::uint8_t variant_code) {
    if (values.rows() > std::numeric_limits<std::uint32_t>::max() ||
        values.cols() > std::numeric_limits<std::uint32_t>::max()) {
        throw ShapeError("encode_gram: matrix too large for the file header");
    }
    std::vector<unsigned char> out(kGramMagic.begin(), kGramMagic.end());
    out.reserve(24 + static_cast<std::size_t>(values.size()) * 8);
    detail::put_le<std::uint32_t>(out, kGramVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.rows()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.cols()));
    out.push_back(static_cast<unsigned char>(kind));
    out.push_back(variant_code);
    detail::put_le<std::uint16_t>(out, 0);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(values(i, j)));
        }
    }
    return out;
}

inline GramFile decode_gram(const std::vector<unsigned char>& bytes) {
    constexpr std::size_t header = 24;
    if (bytes.size() < header || std::memcmp(bytes.data(), kGramMagic.data(), kGramMagic.size()) != 0) {
        throw ParseError("not a Gram file (bad magic)");
    }
    GramFile g;
    g.version = detail::get_le<std::uint32_t>(&bytes[8]);
    if (g.version != kGramVersion) throw ParseError("unsupported Gram file version " + std::to_string(g.version));
    const auto rows = detail::get_le<std::uint32_t>(&bytes[12]);
    const auto cols = detail::get_le<std::uint32_t>(&bytes[16]);
    const auto kind = bytes[20];
    if (kind > 1) throw ParseError("invalid kernel kind byte");
    g.kind = static_cast<KernelKind>(kind);
    g.variant_code = bytes[21];
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (bytes.size() != header + count * 8) throw ParseError("Gram file size does not match its header");
    g.values.resize(rows, cols);
    const unsigned char* p = bytes.data() + header;
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j, p += 8) {
            g.values(i, j) = std::bit_cast<double>(detail::get_le<std::uint64_t>(p));
        }
    }
    return g;
}

inline void write_gram(const std::filesystem::path& path, const Matrix& values, KernelKind kind,
                       const Variant& variant) {
    const auto bytes = encode_gram(values, kind, variant.code());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

inline GramFile read_gram(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_gram(bytes);
}

/// Plain CSV dump, one matrix row per line, round-trippable precision.
inline void write_csv(const std::filesystem::path& path, const Matrix& values) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            if (j) out << ',';
            out << values(i, j);
        }
        out << '\n';
    }
}

}  // namespace rntk
