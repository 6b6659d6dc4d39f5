#include "siemmap/prompt.hpp"

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

std::string render(const PromptTemplate& tmpl, std::string_view input) {
  if (trim(input).empty()) throw Error(Errc::EmptyInput, "prompt input is empty");
  if (trim(tmpl.context).empty() || trim(tmpl.instruction).empty() || trim(tmpl.guidelines).empty()) {
    throw Error(Errc::ConfigError, "prompt template has an empty section");
  }
  std::string out;
  out.reserve(tmpl.context.size() + tmpl.instruction.size() + tmpl.guidelines.size() +
              input.size() + 64);
  out += "### Context\n";
  out += trim(tmpl.context);
  out += "\n\n### Instruction\n";
  out += trim(tmpl.instruction);
  out += "\n\n### Guidelines\n";
  out += trim(tmpl.guidelines);
  out += "\n\n### Input\n";
  out += trim(input);
  out += '\n';
  return out;
}

}  // namespace siemmap
