#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "siemmap/pipeline.hpp"
#include "siemmap/technique_id.hpp"

namespace siemmap {

enum class MatchSemantics { strict, parent_lenient };

std::string_view semantics_name(MatchSemantics s) noexcept;
MatchSemantics parse_semantics(std::string_view name);

/// Gold ids credited by `predicted`. Strict is plain set intersection.
/// Parent-lenient also pairs a sub-technique with its parent (either
/// direction); every gold id and every prediction is used at most once, and
/// the pairing is maximal with exact matches kept.
std::set<TechniqueId> match(const std::set<TechniqueId>& gold, const std::set<TechniqueId>& predicted,
                            MatchSemantics semantics = MatchSemantics::strict);

struct SampleEval {
  std::string rule_id;
  std::set<TechniqueId> gold;
  std::set<TechniqueId> predicted;
  double recall = 0.0;
  double precision = 0.0;
};

/// Throws Error(EmptyGold). An empty prediction scores precision 0.
SampleEval evaluate_sample(const std::set<TechniqueId>& gold, const std::set<TechniqueId>& predicted,
                           MatchSemantics semantics = MatchSemantics::strict,
                           std::string rule_id = {});

struct SkippedRule {
  std::string rule_id;
  std::string reason;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  double ar = 0.0;
  double ap = 0.0;
  double war = 0.0;
  double wap = 0.0;
  double f1 = 0.0;
  std::string config_fingerprint;
  std::vector<SkippedRule> skipped;
};

/// Harmonic mean; 0 when both are 0.
double f1_score(double recall, double precision) noexcept;

/// Means over samples; the weighted variants weigh each sample by its
/// share of all gold labels. Throws Error(EmptySamples).
EvalReport aggregate(std::vector<SampleEval> samples, std::string config_fingerprint = {});

/// Canonical "k=v;k=v" rendering (keys sorted).
std::string make_fingerprint(const std::map<std::string, std::string>& fields);

// ---------------------------------------------------------------------------
// Recommendation-count policies

struct KPolicy {
  enum class Kind { fixed, dynamic };
  Kind kind = Kind::dynamic;
  std::size_t k = 0;
  double threshold = 0.8;

  static KPolicy fixed(std::size_t k);
  static KPolicy dynamic(double threshold);
  /// "1", "11", "dynamic-k" ...
  std::string label() const;
  friend bool operator==(const KPolicy&, const KPolicy&) = default;
};

/// Accepts "fixed:K", "K" and "dynamic:T". Throws Error(ConfigError).
KPolicy parse_k_policy(std::string_view text);
std::string format_k_policy(const KPolicy& p);

/// Predictions the policy derives from scored candidates: the k most
/// confident for fixed(k), everything at or above the threshold for
/// dynamic. Unscored candidates never count.
std::set<TechniqueId> apply_policy(const std::vector<ScoredCandidate>& scored, const KPolicy& policy);

struct SweepPoint {
  KPolicy policy;
  EvalReport report;
};

using GoldMap = std::map<std::string, std::set<TechniqueId>>;

GoldMap gold_map(const std::vector<SiemRule>& rules);

/// Scores pipeline results against gold labels. Predictions are the
/// result's recommendations, or re-derived from its scored candidates when
/// `policy` is given. Failed results and rules without gold labels go to
/// `skipped`. Throws Error(EmptySamples) if nothing is left.
EvalReport evaluate_results(const std::vector<MappingResult>& results, const GoldMap& gold,
                            MatchSemantics semantics, const std::optional<KPolicy>& policy,
                            std::string config_fingerprint = {});

/// One report per policy over the same scored candidates. Throws
/// Error(MissingScores) if a successful result has candidates but no scores.
std::vector<SweepPoint> sweep_k(const std::vector<MappingResult>& results, const GoldMap& gold,
                                const std::vector<KPolicy>& policies, MatchSemantics semantics,
                                const std::map<std::string, std::string>& fingerprint = {});

/// 1, 3, ..., 13 and dynamic(0.8).
std::vector<KPolicy> default_sweep_policies(double threshold = 0.8);

struct AblationRun {
  AblationMode mode;
  EvalReport report;
  std::vector<MappingResult> results;
};

/// Runs the pipeline over `rules` once per mode and scores each run. Rule
/// failures land in the skipped list; a mode where every rule fails throws
/// Error(StageFailed).
std::vector<AblationRun> run_ablation(const std::vector<SiemRule>& rules, const PipelineDeps& deps,
                                      const PipelineConfig& config,
                                      const std::vector<AblationMode>& modes,
                                      MatchSemantics semantics, unsigned concurrency = 1,
                                      const std::map<std::string, std::string>& fingerprint = {});

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { structured, tabular, human };

std::string_view format_name(ReportFormat f) noexcept;
ReportFormat parse_format(std::string_view name);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::json sweep_to_json(const std::vector<SweepPoint>& sweep);
std::vector<SweepPoint> sweep_from_json(const nlohmann::json& j);
nlohmann::json ablation_to_json(const std::vector<AblationRun>& runs);

std::string emit_report(const EvalReport& report, ReportFormat format);
/// Tabular output is the PR-curve series, one line per policy.
std::string emit_sweep(const std::vector<SweepPoint>& sweep, ReportFormat format);
std::string emit_ablation(const std::vector<AblationRun>& runs, ReportFormat format);

// ---------------------------------------------------------------------------
// Experiment manifest

struct ExperimentManifest {
  std::string command;
  std::string corpus_hash;
  std::string kb_version;
  std::string backend_id;
  std::string mode;
  std::string policy;
  std::string semantics;
  std::map<std::string, std::string> params;   // everything else needed to re-run
  std::map<std::string, std::string> outputs;  // file name -> sha256
  std::string created_at;                      // informational, not hashed
};

nlohmann::json manifest_to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
/// SHA-256 over every field except created_at.
std::string manifest_hash(const ExperimentManifest& m);

}  // namespace siemmap
