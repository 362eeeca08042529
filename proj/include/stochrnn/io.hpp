#pragma once

#include "stochrnn/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace stochrnn::io {

using Json = nlohmann::json;

// Shortest-round-trip is not enough for some formats; this always prints
// 17 significant digits so the text is a fixed function of the bits.
std::string format_real(double x);

// Writes `j` with every floating-point value printed through format_real.
// Object keys are emitted in sorted order.
std::string dump_json(const Json& j, int indent = 2);

Json to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

// FNV-1a 64-bit, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);
// Digest of a JSON document that is stable under key reordering.
std::string digest(const Json& j);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Row-major little-endian float64 payload.
std::string encode_reals(std::span<const double> values);
Vector decode_reals(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Creates parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Minimal CSV writer: `header` is written verbatim, rows are comma-joined
// with reals printed through format_real.
class CsvWriter {
public:
    explicit CsvWriter(std::string header);
    void row(std::initializer_list<std::string> cells);
    void row(const std::vector<std::string>& cells);
    const std::string& text() const noexcept { return text_; }

private:
    std::string text_;
};

std::string cell(double x);
std::string cell(std::size_t x);
std::string cell(long long x);
std::string cell(int x);

}  // namespace stochrnn::io
