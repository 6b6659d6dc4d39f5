#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace siemmap {

/// Minimal shape descriptor for model replies.
class Schema {
 public:
  enum class Kind { any, string, integer, number, boolean, array, object, map };

  struct Field;

  static Schema any() { return Schema(Kind::any); }
  static Schema string() { return Schema(Kind::string); }
  static Schema integer() { return Schema(Kind::integer); }
  static Schema number() { return Schema(Kind::number); }
  static Schema boolean() { return Schema(Kind::boolean); }
  static Schema array(Schema element);
  /// Object with named fields; unlisted keys are allowed.
  static Schema object(std::vector<Field> fields);
  /// Object with arbitrary keys whose values all match `value`.
  static Schema map(Schema value);

  Kind kind() const noexcept { return kind_; }

  /// Empty string on success, otherwise a path-qualified reason.
  std::string check(const nlohmann::json& value) const;

 private:
  explicit Schema(Kind kind) : kind_(kind) {}
  std::string check_at(const nlohmann::json& value, const std::string& path) const;

  Kind kind_;
  std::shared_ptr<const Schema> element_;
  std::shared_ptr<const std::vector<Field>> fields_;
};

struct Schema::Field {
  std::string name;
  Schema schema;
  bool required = true;
};

/// Extracts the first JSON value in `text` that conforms to `expected`.
/// Repairs are deletions only: surrounding prose and code fences are
/// skipped and trailing commas before a closing bracket are dropped.
/// Throws Error(UnparseableOutput) when no candidate parses (raw text in
/// detail), Error(SchemaMismatch) when candidates parse but none conform.
nlohmann::json parse_structured(std::string_view text, const Schema& expected);

}  // namespace siemmap
