#include "siemmap/structured_output.hpp"

#include <optional>

#include "siemmap/error.hpp"

namespace siemmap {

Schema Schema::array(Schema element) {
  Schema s(Kind::array);
  s.element_ = std::make_shared<const Schema>(std::move(element));
  return s;
}

Schema Schema::object(std::vector<Field> fields) {
  Schema s(Kind::object);
  s.fields_ = std::make_shared<const std::vector<Field>>(std::move(fields));
  return s;
}

Schema Schema::map(Schema value) {
  Schema s(Kind::map);
  s.element_ = std::make_shared<const Schema>(std::move(value));
  return s;
}

std::string Schema::check(const nlohmann::json& value) const { return check_at(value, "$"); }

std::string Schema::check_at(const nlohmann::json& v, const std::string& path) const {
  switch (kind_) {
    case Kind::any:
      return {};
    case Kind::string:
      return v.is_string() ? std::string{} : path + ": expected string";
    case Kind::integer:
      return v.is_number_integer() ? std::string{} : path + ": expected integer";
    case Kind::number:
      return v.is_number() ? std::string{} : path + ": expected number";
    case Kind::boolean:
      return v.is_boolean() ? std::string{} : path + ": expected boolean";
    case Kind::array: {
      if (!v.is_array()) return path + ": expected array";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (auto why = element_->check_at(v[i], path + "[" + std::to_string(i) + "]"); !why.empty()) {
          return why;
        }
      }
      return {};
    }
    case Kind::object: {
      if (!v.is_object()) return path + ": expected object";
      for (const auto& f : *fields_) {
        auto it = v.find(f.name);
        if (it == v.end() || it->is_null()) {
          if (f.required) return path + "." + f.name + ": missing";
          continue;
        }
        if (auto why = f.schema.check_at(*it, path + "." + f.name); !why.empty()) return why;
      }
      return {};
    }
    case Kind::map: {
      if (!v.is_object()) return path + ": expected object";
      for (const auto& [k, item] : v.items()) {
        if (auto why = element_->check_at(item, path + "." + k); !why.empty()) return why;
      }
      return {};
    }
  }
  return path + ": unknown schema kind";
}

namespace {

/// End (exclusive) of the bracketed value starting at `start`, or nullopt
/// when the brackets never balance.
std::optional<std::size_t> balanced_end(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '{': stack.push_back('}'); break;
      case '[': stack.push_back(']'); break;
      case '}':
      case ']':
        if (stack.empty() || stack.back() != c) return std::nullopt;
        stack.pop_back();
        if (stack.empty()) return i + 1;
        break;
      default: break;
    }
  }
  return std::nullopt;
}

std::string drop_trailing_commas(std::string_view candidate) {
  std::string out;
  out.reserve(candidate.size());
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const char c = candidate[i];
    if (in_string) {
      out.push_back(c);
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < candidate.size() && (candidate[j] == ' ' || candidate[j] == '\n' ||
                                      candidate[j] == '\r' || candidate[j] == '\t')) {
        ++j;
      }
      if (j < candidate.size() && (candidate[j] == '}' || candidate[j] == ']')) continue;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

nlohmann::json parse_structured(std::string_view text, const Schema& expected) {
  const bool want_object = expected.kind() == Schema::Kind::object || expected.kind() == Schema::Kind::map;
  const bool want_array = expected.kind() == Schema::Kind::array;
  std::string first_mismatch;

  std::size_t pos = 0;
  while (pos < text.size()) {
    const char c = text[pos];
    const bool opener = (c == '{' && !want_array) || (c == '[' && !want_object);
    if (!opener) {
      ++pos;
      continue;
    }
    auto end = balanced_end(text, pos);
    if (!end) {
      ++pos;
      continue;
    }
    const std::string candidate = drop_trailing_commas(text.substr(pos, *end - pos));
    auto parsed = nlohmann::json::parse(candidate, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) {
      ++pos;
      continue;
    }
    std::string why = expected.check(parsed);
    if (why.empty()) return parsed;
    if (first_mismatch.empty()) first_mismatch = why;
    pos = *end;
  }
  if (!first_mismatch.empty()) {
    throw Error(Errc::SchemaMismatch, "model output has the wrong shape (" + first_mismatch + ")",
                std::string(text));
  }
  throw Error(Errc::UnparseableOutput, "no structured value found in model output", std::string(text));
}

}  // namespace siemmap
