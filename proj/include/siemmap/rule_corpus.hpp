#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "siemmap/technique_id.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

enum class RuleDomain { endpoint, network, application, cloud, web, other };

std::string_view domain_name(RuleDomain d) noexcept;
/// Maps upstream `security_domain` values onto the domain enum; unknown
/// values become `other`.
RuleDomain parse_domain(std::string_view name) noexcept;

struct SiemRule {
  std::string id;
  std::string name;
  std::string search;
  RuleDomain domain = RuleDomain::other;
  std::optional<Date> created;
  std::optional<Date> modified;
  std::set<TechniqueId> gold_labels;

  /// Modified date, falling back to created.
  std::optional<Date> effective_modified() const { return modified ? modified : created; }

  friend bool operator==(const SiemRule&, const SiemRule&) = default;
};

/// Parses one detection document in the security_content YAML layout.
/// Throws Error(MalformedDocument | MissingField | InvalidLabel).
SiemRule parse_rule_file(std::string_view raw);

/// Renders a rule back into the upstream layout; parse_rule_file inverts it.
std::string serialize_rule(const SiemRule& rule);

struct CorpusFilter {
  Date cutoff_date = Date{std::chrono::year{2024}, std::chrono::November, std::chrono::day{1}};
  std::optional<RuleDomain> domain;
  bool require_labels = true;
};

/// True when the rule passes every predicate of `filter`.
bool passes(const SiemRule& rule, const CorpusFilter& filter);

struct CorpusOptions {
  bool skip_invalid = false;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct SkippedFile {
  std::filesystem::path path;
  std::string reason;
};

struct Corpus {
  std::vector<SiemRule> rules;  // sorted by id
  std::vector<SkippedFile> skipped;
};

/// Loads every *.yml / *.yaml under `root`, keeps those passing `filter`.
/// Throws Error(EmptyCorpus) if nothing survives; parse errors carry the
/// file path unless `skip_invalid` is set.
Corpus build_corpus(const std::filesystem::path& root, const CorpusFilter& filter,
                    const CorpusOptions& options = {});

struct LabelDistribution {
  std::map<std::size_t, std::size_t> histogram;  // label count -> rule count
};

/// Throws Error(EmptyCorpus) for an empty corpus.
LabelDistribution label_distribution(const std::vector<SiemRule>& corpus);

/// One JSON object per line: id, name, created, modified, labels and the
/// SHA-256 of the search text.
std::string corpus_manifest(const std::vector<SiemRule>& corpus);
/// SHA-256 over the manifest; identifies the corpus in experiment manifests.
std::string corpus_hash(const std::vector<SiemRule>& corpus);

}  // namespace siemmap
