#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace siemmap {

using Date = std::chrono::year_month_day;

/// Parses an ISO calendar date ("2024-11-01"). Returns nullopt on anything
/// that is not a valid YYYY-MM-DD date.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(const Date& date);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

/// Splits on runs of non-alphanumeric characters and lowercases the pieces.
std::vector<std::string> tokenize(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace siemmap
