#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace siemmap {

enum class Errc {
  // rule_corpus
  MalformedDocument,
  MissingField,
  InvalidLabel,
  EmptyCorpus,
  // attack_kb
  InvalidTechniqueId,
  MalformedBundle,
  MissingExternalId,
  UnknownTechnique,
  // embedding_index
  EmptyText,
  DuplicateDoc,
  IndexMismatch,
  // llm_gateway
  BackendUnavailable,
  EmptyInput,
  BudgetExceeded,
  CacheMiss,
  UnparseableOutput,
  SchemaMismatch,
  // pipeline
  StageFailed,
  SelectionOutOfSet,
  ToolUnavailable,
  // evaluator
  EmptyGold,
  EmptySamples,
  MissingScores,
  // plumbing
  ConfigError,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Library-wide exception. `detail` carries the offending input (a label,
/// a path, a raw model reply) so callers can report it without re-parsing
/// the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::string detail = {})
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(std::move(detail)) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace siemmap
