#include "siemmap/technique_id.hpp"

#include <cctype>
#include <cstdio>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

namespace {

bool all_digits(std::string_view s) {
  for (unsigned char c : s) {
    if (!std::isdigit(c)) return false;
  }
  return !s.empty();
}

std::uint16_t to_u16(std::string_view digits) {
  std::uint16_t v = 0;
  for (char c : digits) v = static_cast<std::uint16_t>(v * 10 + (c - '0'));
  return v;
}

}  // namespace

TechniqueId::TechniqueId(std::uint16_t base, std::optional<std::uint16_t> sub)
    : base_(base), sub_(sub) {
  if (base_ > 9999 || (sub_ && *sub_ > 999)) {
    throw Error(Errc::InvalidTechniqueId, "technique id component out of range");
  }
}

std::optional<TechniqueId> TechniqueId::try_parse(std::string_view text) noexcept {
  std::string s = to_upper(trim(text));
  // Tdddd or Tdddd.ddd
  if (s.size() != 5 && s.size() != 9) return std::nullopt;
  if (s[0] != 'T') return std::nullopt;
  std::string_view v(s);
  if (!all_digits(v.substr(1, 4))) return std::nullopt;
  std::optional<std::uint16_t> sub;
  if (s.size() == 9) {
    if (s[5] != '.' || !all_digits(v.substr(6, 3))) return std::nullopt;
    sub = to_u16(v.substr(6, 3));
  }
  return TechniqueId(to_u16(v.substr(1, 4)), sub);
}

TechniqueId TechniqueId::parse(std::string_view text) {
  if (auto id = try_parse(text)) return *id;
  throw Error(Errc::InvalidTechniqueId, "invalid technique id '" + std::string(text) + "'",
              std::string(text));
}

std::string TechniqueId::str() const {
  char buf[16];
  if (sub_) {
    std::snprintf(buf, sizeof buf, "T%04u.%03u", unsigned{base_}, unsigned{*sub_});
  } else {
    std::snprintf(buf, sizeof buf, "T%04u", unsigned{base_});
  }
  return buf;
}

}  // namespace siemmap
