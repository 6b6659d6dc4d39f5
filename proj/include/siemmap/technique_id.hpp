#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace siemmap {

/// ATT&CK technique or sub-technique identifier ("T1087", "T1087.002").
///
/// Stored numerically; ordering matches the lexicographic order of the
/// canonical rendering because both parts are fixed-width.
class TechniqueId {
 public:
  /// Trims, uppercases and validates `text`. Throws Error(InvalidTechniqueId).
  static TechniqueId parse(std::string_view text);
  static std::optional<TechniqueId> try_parse(std::string_view text) noexcept;

  TechniqueId(std::uint16_t base, std::optional<std::uint16_t> sub = std::nullopt);

  std::uint16_t base() const noexcept { return base_; }
  std::optional<std::uint16_t> sub() const noexcept { return sub_; }
  bool is_subtechnique() const noexcept { return sub_.has_value(); }

  /// The base technique; identity on techniques.
  TechniqueId parent() const noexcept { return TechniqueId(base_); }

  std::string str() const;

  friend auto operator<=>(const TechniqueId&, const TechniqueId&) = default;
  friend bool operator==(const TechniqueId&, const TechniqueId&) = default;

 private:
  std::uint16_t base_;
  std::optional<std::uint16_t> sub_;
};

inline TechniqueId parse_technique_id(std::string_view text) { return TechniqueId::parse(text); }
inline TechniqueId parent_of(const TechniqueId& id) noexcept { return id.parent(); }

}  // namespace siemmap

template <>
struct std::hash<siemmap::TechniqueId> {
  std::size_t operator()(const siemmap::TechniqueId& id) const noexcept {
    return (static_cast<std::size_t>(id.base()) << 16) | (id.sub() ? *id.sub() + 1u : 0u);
  }
};
