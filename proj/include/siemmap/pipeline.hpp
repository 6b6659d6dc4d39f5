#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "siemmap/attack_kb.hpp"
#include "siemmap/embedding.hpp"
#include "siemmap/error.hpp"
#include "siemmap/gateway.hpp"
#include "siemmap/rule_corpus.hpp"
#include "siemmap/search_tool.hpp"
#include "siemmap/vector_index.hpp"

namespace siemmap {

// ---------------------------------------------------------------------------
// Stage artifacts

/// IoC kind -> values. Values are non-empty, deduplicated per kind and keep
/// first-seen order. Kinds the model invents are kept as returned.
class IocSet {
 public:
  void add(const std::string& kind, const std::string& value);
  const std::map<std::string, std::vector<std::string>>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t value_count() const noexcept;

  friend bool operator==(const IocSet&, const IocSet&) = default;

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

struct IocContext {
  std::string ioc_kind;
  std::string ioc_value;
  std::string summary;
  std::vector<std::string> sources;  // URLs
  std::string retrieved_at;
  bool degraded = false;  // search tool failed at least once
};

enum class AblationMode { rule_as_is, no_context, with_context };

std::string_view mode_name(AblationMode m) noexcept;
/// Human label used in comparison tables.
std::string_view mode_label(AblationMode m) noexcept;
AblationMode parse_mode(std::string_view name);

struct RuleDescription {
  std::string text;
  bool used_context = false;
};

struct DetectionAnchor {
  DocKind kind = DocKind::data_component;
  std::string doc_id;
  std::string name;
  std::string rationale;
  std::string query;                   // retrieval query the agent issued
  std::vector<std::string> retrieved;  // doc ids offered to the model
};

struct CandidateTechnique {
  TechniqueId id;
  std::string name;
  std::string description;
};

struct Recommendation {
  TechniqueId id;
  std::string rationale;
  double confidence = 0.0;
};

enum class ConfidenceMethod { model, embedding };

std::string_view confidence_method_name(ConfidenceMethod m) noexcept;
ConfidenceMethod parse_confidence_method(std::string_view name);

/// Stage-6 outcome for one candidate, kept whether or not it passes the
/// threshold so experiments can re-cut the same scores.
struct ScoredCandidate {
  TechniqueId id;
  std::string rationale;
  std::optional<double> confidence;  // absent when scoring failed
  std::string error;
};

struct StageFailure {
  std::string stage;
  Errc code = Errc::StageFailed;
  std::string message;
};

/// Everything one rule produced, including partial output when a stage
/// failed.
struct MappingResult {
  std::string rule_id;
  AblationMode mode = AblationMode::with_context;
  IocSet iocs;
  std::vector<IocContext> contexts;
  std::optional<RuleDescription> description;
  std::optional<DetectionAnchor> anchor;
  std::vector<CandidateTechnique> candidates;
  std::vector<ScoredCandidate> scored;
  std::vector<Recommendation> recommendations;  // confidence desc, id asc
  ConfidenceMethod confidence_method = ConfidenceMethod::model;
  std::map<std::string, double> stage_timings_ms;
  std::vector<std::string> warnings;
  std::optional<StageFailure> failure;

  bool ok() const noexcept { return !failure.has_value(); }
};

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  AblationMode mode = AblationMode::with_context;
  std::size_t recommend_k = 11;
  std::size_t retrieval_k = 5;
  double threshold = 0.8;
  unsigned max_search_iterations = 3;  // web searches per IoC
  unsigned max_kb_searches = 3;        // KB searches by the recommend agent
  std::size_t kb_search_limit = 10;    // hits per KB search
  std::size_t anchor_related_limit = 50;
  ConfidenceMethod confidence = ConfidenceMethod::model;
};

/// Persisted (ioc_kind, ioc_value) -> context store. JSON lines, append-only.
class EnrichmentCache {
 public:
  EnrichmentCache() = default;
  explicit EnrichmentCache(std::filesystem::path path);

  std::optional<IocContext> find(const std::string& kind, const std::string& value) const;
  void put(const IocContext& ctx);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, IocContext> entries_;
};

struct PipelineDeps {
  std::shared_ptr<const AttackKb> kb;
  std::shared_ptr<Gateway> gateway;
  std::shared_ptr<const VectorIndex> index;   // stage 4 is skipped when null
  std::shared_ptr<const Embedder> embedder;   // required with index or embedding confidence
  std::shared_ptr<SearchTool> search;         // null: enrichment runs without a tool
  std::shared_ptr<EnrichmentCache> enrichment_cache;
  std::function<std::string()> clock;         // ISO timestamp; null: fixed epoch
};

// ---------------------------------------------------------------------------
// Stages. Each throws Error(StageFailed) with the stage name in detail()
// unless noted otherwise.

/// Stage 1.
IocSet extract_iocs(const SiemRule& rule, Gateway& gateway);

struct EnrichmentOutcome {
  std::vector<IocContext> contexts;
  std::vector<std::string> warnings;
  unsigned tool_calls = 0;
};

/// Stage 2. A bounded reason/act/observe loop per IoC value. Tool and parse
/// failures degrade to thinner context and never abort.
EnrichmentOutcome enrich_context(const IocSet& iocs, SearchTool* search, Gateway& gateway,
                                 unsigned max_iterations, EnrichmentCache* cache = nullptr,
                                 const std::function<std::string()>& clock = {});

/// Stage 3. The prompt for no_context never includes `contexts`.
RuleDescription translate_rule(const SiemRule& rule, const std::vector<IocContext>& contexts,
                               AblationMode mode, Gateway& gateway);
/// The exact stage-3 input section for `mode`; empty for rule_as_is.
std::string translate_input(const SiemRule& rule, const std::vector<IocContext>& contexts,
                            AblationMode mode);

/// Stage 4. One corrective re-prompt if the model names a document outside
/// the retrieved set, then Error(StageFailed) with SelectionOutOfSet cause.
DetectionAnchor identify_anchor(const RuleDescription& desc, const VectorIndex& index,
                                const Embedder& embedder, const AttackKb& kb, Gateway& gateway,
                                std::size_t retrieval_k = 5);

struct RecommendOutcome {
  std::vector<CandidateTechnique> candidates;
  std::vector<std::string> warnings;
  unsigned tool_calls = 0;
};

/// Stage 5. Candidates are validated against the KB, deduplicated, capped
/// at `k` and re-hydrated from the KB.
RecommendOutcome recommend_techniques(const RuleDescription& desc,
                                      const std::optional<DetectionAnchor>& anchor,
                                      const AttackKb& kb, Gateway& gateway, std::size_t k,
                                      unsigned max_kb_searches = 3, std::size_t kb_search_limit = 10,
                                      std::size_t anchor_related_limit = 50);

struct FilterOutcome {
  std::vector<ScoredCandidate> scored;
  std::vector<Recommendation> recommendations;
  std::vector<std::string> warnings;
};

/// Stage 6. Per candidate: comparison rationale, then confidence; keeps
/// confidence >= threshold. A candidate whose reply cannot be used is
/// dropped with a warning. `embedder` is required for the embedding method.
FilterOutcome filter_relevant(const RuleDescription& desc,
                              const std::vector<CandidateTechnique>& candidates, Gateway& gateway,
                              double threshold, ConfidenceMethod method = ConfidenceMethod::model,
                              const Embedder* embedder = nullptr);

/// Applies the threshold cut to already-scored candidates.
std::vector<Recommendation> select_recommendations(const std::vector<ScoredCandidate>& scored,
                                                   double threshold);

/// Runs stages 1-6. Stage failures are reported in `failure` with the
/// completed stages' output kept.
MappingResult run_pipeline(const SiemRule& rule, const PipelineDeps& deps,
                           const PipelineConfig& config);

/// Runs every rule on a pool of `concurrency` workers; results keep the
/// input order.
std::vector<MappingResult> run_corpus(const std::vector<SiemRule>& rules, const PipelineDeps& deps,
                                      const PipelineConfig& config, unsigned concurrency = 1);

// ---------------------------------------------------------------------------
// Audit trail

/// Deterministic JSON record of a result; stage timings only on request.
nlohmann::json result_to_json(const MappingResult& result, bool include_timings = false);
MappingResult result_from_json(const nlohmann::json& j);

}  // namespace siemmap
