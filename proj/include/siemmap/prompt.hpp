#pragma once

#include <string>
#include <string_view>

namespace siemmap {

/// Four-part prompt: Context, Instruction, Guidelines, then the Input slot
/// filled at render time.
struct PromptTemplate {
  std::string context;
  std::string instruction;
  std::string guidelines;
};

/// Deterministic: the same template and input always produce the same bytes.
/// Throws Error(EmptyInput) on blank input, Error(ConfigError) if a template
/// part is blank.
std::string render(const PromptTemplate& tmpl, std::string_view input);

}  // namespace siemmap
