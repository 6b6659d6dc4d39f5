// siemmap command-line front end.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error,
// 5 partial (some rules failed).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "siemmap/attack_kb.hpp"
#include "siemmap/config.hpp"
#include "siemmap/error.hpp"
#include "siemmap/evaluator.hpp"
#include "siemmap/pipeline.hpp"
#include "siemmap/rule_corpus.hpp"
#include "siemmap/util.hpp"

using namespace siemmap;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kData = 3;
constexpr int kBackend = 4;
constexpr int kPartial = 5;

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::ConfigError: return kConfig;
    case Errc::BackendUnavailable:
    case Errc::BudgetExceeded:
    case Errc::CacheMiss:
    case Errc::UnparseableOutput:
    case Errc::SchemaMismatch:
    case Errc::StageFailed:
    case Errc::SelectionOutOfSet:
    case Errc::ToolUnavailable: return kBackend;
    default: return kData;
  }
}

// Flags shared by every command that runs the pipeline. Each one maps onto
// a config-file key, so flag > file > default falls out of applying them
// last.
struct CommonFlags {
  std::string config_file;
  std::map<std::string, std::string> text;
  std::map<std::string, std::string> numbers;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file")->check(CLI::ExistingFile);
  auto text = [&](const char* flag, const char* key, const char* help) {
    cmd->add_option(flag, f.text[key], help);
  };
  auto number = [&](const char* flag, const char* key, const char* help) {
    cmd->add_option(flag, f.numbers[key], help);
  };
  text("--backend", "backend", "mock | remote | local");
  text("--model", "model", "chat model name");
  text("--base-url", "base_url", "OpenAI-compatible endpoint");
  text("--api-key-env", "api_key_env", "environment variable holding the API key");
  text("--embedder", "embedder", "hash | remote");
  text("--search", "search", "auto | fixtures | live | none");
  text("--search-endpoint", "search_endpoint", "SearXNG-style JSON search URL");
  text("--kb", "kb", "ATT&CK STIX bundle or KB snapshot");
  text("--index", "index", "prebuilt vector index");
  text("--fixtures", "fixtures", "offline fixture bundle");
  text("--cache-dir", "cache_dir", "record/replay cache directory");
  text("--cache-mode", "cache_mode", "off | record | replay | read-through");
  text("--cutoff", "cutoff", "corpus cutoff date YYYY-MM-DD");
  text("--domain", "domain", "keep only rules of this security domain");
  text("--mode", "mode", "rule_as_is | no_context | with_context");
  text("--k", "k", "fixed:K, K or dynamic:T");
  text("--semantics", "semantics", "strict | parent_lenient");
  text("--confidence", "confidence", "model | embedding");
  text("--format", "format", "human | tabular | structured");
  number("--threshold", "threshold", "dynamic-k confidence threshold");
  number("--retrieval-k", "retrieval_k", "documents retrieved for the anchor");
  number("--recommend-k", "recommend_k", "techniques requested from the recommender");
  number("--concurrency", "concurrency", "pipeline workers");
  number("--max-search-iterations", "max_search_iterations", "web searches per IoC");
  number("--temperature", "temperature", "sampling temperature");
  number("--max-calls", "max_calls", "backend call budget");
  number("--max-tokens", "max_tokens", "token budget");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_file.empty()) apply_config_file(cfg, f.config_file);
  json layer = json::object();
  for (const auto& [k, v] : f.text)
    if (!v.empty()) layer[k] = v;
  for (const auto& [k, v] : f.numbers) {
    if (v.empty()) continue;
    try {
      std::size_t used = 0;
      if (k == "threshold" || k == "temperature") {
        layer[k] = std::stod(v, &used);
      } else {
        layer[k] = static_cast<std::uint64_t>(std::stoull(v, &used));
      }
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw Error(Errc::ConfigError, "--" + k + " expects a number, got '" + v + "'", k);
    }
  }
  // --threshold selects the dynamic policy unless --k says otherwise.
  if (layer.contains("threshold") && layer.contains("k")) layer.erase("threshold");
  apply_config_json(cfg, layer);
  return cfg;
}

void write_out(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, data);
}

std::string results_jsonl(const std::vector<MappingResult>& results) {
  std::string out;
  for (const auto& r : results) out += result_to_json(r).dump() + "\n";
  return out;
}

void write_manifest(const std::filesystem::path& path, ExperimentManifest m,
                    const std::map<std::string, std::string>& outputs) {
  for (const auto& [name, data] : outputs) m.outputs[name] = sha256_hex(data);
  write_out(path, manifest_to_json(m).dump(2) + "\n");
}

std::vector<SiemRule> load_corpus(const RunConfig& cfg) {
  if (cfg.corpus_root.empty()) throw Error(Errc::ConfigError, "no corpus given (--corpus)");
  if (!std::filesystem::exists(cfg.corpus_root)) {
    throw Error(Errc::IoError, "corpus not found: " + cfg.corpus_root.string(), cfg.corpus_root.string());
  }
  CorpusFilter filter;
  filter.cutoff_date = cfg.cutoff;
  filter.domain = cfg.domain;
  return build_corpus(cfg.corpus_root, filter).rules;
}

std::size_t failures(const std::vector<MappingResult>& results) {
  std::size_t n = 0;
  for (const auto& r : results) n += r.ok() ? 0 : 1;
  return n;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(const std::string& bundle, const std::string& out, bool data_sources) {
  IngestOptions opts;
  opts.include_data_sources = data_sources;
  const AttackKb kb = ingest_stix_file(bundle, opts);
  write_out(out, save_snapshot(kb));
  std::size_t subs = 0;
  for (const auto& [id, t] : kb.techniques()) subs += (t.active() && id.is_subtechnique()) ? 1 : 0;
  std::map<DocKind, std::size_t> docs;
  for (const auto& d : kb.docs()) ++docs[d.kind];
  std::printf("kb version:        %s\n", kb.version().c_str());
  std::printf("techniques:        %zu (%zu active, %zu active sub-techniques)\n",
              kb.techniques().size(), kb.active_count(), subs);
  for (const auto& [kind, n] : docs) {
    std::printf("%-18s %zu\n", (std::string(doc_kind_name(kind)) + "s:").c_str(), n);
  }
  std::printf("snapshot:          %s\n", out.c_str());
  return kOk;
}

int cmd_build_corpus(const std::string& root, const std::string& cutoff, const std::string& domain,
                     const std::string& out, bool skip_invalid) {
  CorpusFilter filter;
  if (!cutoff.empty()) {
    auto d = parse_date(cutoff);
    if (!d) throw Error(Errc::ConfigError, "bad --cutoff '" + cutoff + "'");
    filter.cutoff_date = *d;
  }
  if (!domain.empty()) filter.domain = parse_domain(domain);
  CorpusOptions opts;
  opts.skip_invalid = skip_invalid;
  const Corpus corpus = build_corpus(root, filter, opts);
  if (!out.empty()) write_out(out, corpus_manifest(corpus.rules));
  std::printf("rules:        %zu\n", corpus.rules.size());
  std::printf("corpus hash:  %s\n", corpus_hash(corpus.rules).c_str());
  std::printf("labels per rule:\n");
  for (const auto& [labels, rules] : label_distribution(corpus.rules).histogram) {
    std::printf("  %2zu: %zu\n", labels, rules);
  }
  for (const auto& s : corpus.skipped) {
    std::fprintf(stderr, "skipped %s: %s\n", s.path.string().c_str(), s.reason.c_str());
  }
  return corpus.skipped.empty() ? kOk : kPartial;
}

int cmd_map(const RunConfig& cfg, const std::string& rule_path, const std::string& out,
            bool rationales) {
  if (!std::filesystem::exists(rule_path)) {
    throw Error(Errc::IoError, "rule file not found: " + rule_path, rule_path);
  }
  SiemRule rule = parse_rule_file(read_file(rule_path));
  if (rule.id.empty()) rule.id = std::filesystem::path(rule_path).stem().string();
  Session s = open_session(cfg);
  MappingResult result = run_pipeline(rule, s.deps, pipeline_config(cfg));
  if (cfg.k_policy.kind == KPolicy::Kind::fixed) apply_policy(result, cfg.k_policy);

  const std::string doc = result_to_json(result).dump(2) + "\n";
  if (!out.empty()) {
    write_out(out, doc);
    write_manifest(out + ".manifest.json", make_manifest(s, "map", corpus_hash({rule})),
                   {{std::filesystem::path(out).filename().string(), doc}});
  }

  if (cfg.format == ReportFormat::structured) {
    std::cout << doc;
  } else {
    std::printf("%s\n", result.rule_id.c_str());
    if (cfg.format == ReportFormat::tabular) std::printf("id,name,confidence\n");
    for (const auto& r : result.recommendations) {
      const Technique* t = s.kb->find(r.id);
      const std::string name = t ? t->name : "";
      if (cfg.format == ReportFormat::tabular) {
        std::printf("%s,%s,%.3f\n", r.id.str().c_str(), name.c_str(), r.confidence);
      } else {
        std::printf("  %-10s %-48s %.2f\n", r.id.str().c_str(), name.c_str(), r.confidence);
      }
      if (rationales) std::printf("    %s\n", r.rationale.c_str());
    }
    if (result.recommendations.empty() && result.ok()) std::printf("  (no technique above threshold)\n");
  }
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (result.failure) {
    std::fprintf(stderr, "error: stage %s failed: %s\n", result.failure->stage.c_str(),
                 result.failure->message.c_str());
    return exit_code_for(result.failure->code);
  }
  return kOk;
}

void print_skips(const EvalReport& r) {
  for (const auto& s : r.skipped) std::fprintf(stderr, "skipped %s: %s\n", s.rule_id.c_str(), s.reason.c_str());
}

int cmd_evaluate(const RunConfig& cfg, const std::string& out_dir) {
  const auto rules = load_corpus(cfg);
  Session s = open_session(cfg);
  auto results = run_corpus(rules, s.deps, pipeline_config(cfg), cfg.concurrency);
  if (cfg.k_policy.kind == KPolicy::Kind::fixed)
    for (auto& r : results) apply_policy(r, cfg.k_policy);

  ExperimentManifest m = make_manifest(s, "evaluate", corpus_hash(rules));
  const EvalReport report = evaluate_results(
      results, gold_map(rules), cfg.semantics, std::nullopt,
      make_fingerprint({{"mode", m.mode}, {"policy", m.policy}, {"semantics", m.semantics},
                        {"backend", m.backend_id}, {"kb", m.kb_version}}));
  std::cout << emit_report(report, cfg.format);
  print_skips(report);
  if (!out_dir.empty()) {
    const std::filesystem::path dir = out_dir;
    std::map<std::string, std::string> files = {
        {"results.jsonl", results_jsonl(results)},
        {"report.json", emit_report(report, ReportFormat::structured)},
        {"report.csv", emit_report(report, ReportFormat::tabular)},
        {"report.txt", emit_report(report, ReportFormat::human)}};
    for (const auto& [name, data] : files) write_out(dir / name, data);
    write_manifest(dir / "manifest.json", m, files);
  }
  return failures(results) ? kPartial : kOk;
}

int cmd_ablate(const RunConfig& cfg, const std::string& out_dir) {
  const auto rules = load_corpus(cfg);
  Session s = open_session(cfg);
  ExperimentManifest m = make_manifest(s, "ablate", corpus_hash(rules));
  m.mode = "all";
  const auto runs = run_ablation(
      rules, s.deps, pipeline_config(cfg),
      {AblationMode::rule_as_is, AblationMode::no_context, AblationMode::with_context}, cfg.semantics,
      cfg.concurrency, {{"backend", m.backend_id}, {"kb", m.kb_version}});
  std::cout << emit_ablation(runs, cfg.format);
  std::size_t failed = 0;
  for (const auto& run : runs) {
    print_skips(run.report);
    failed += failures(run.results);
  }
  if (!out_dir.empty()) {
    const std::filesystem::path dir = out_dir;
    std::map<std::string, std::string> files = {
        {"ablation.json", emit_ablation(runs, ReportFormat::structured)},
        {"ablation.csv", emit_ablation(runs, ReportFormat::tabular)},
        {"ablation.txt", emit_ablation(runs, ReportFormat::human)}};
    for (const auto& run : runs) {
      files["results-" + std::string(mode_name(run.mode)) + ".jsonl"] = results_jsonl(run.results);
    }
    for (const auto& [name, data] : files) write_out(dir / name, data);
    write_manifest(dir / "manifest.json", m, files);
  }
  return failed ? kPartial : kOk;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<std::string>& policy_args,
              const std::string& out_dir) {
  std::vector<KPolicy> policies;
  for (const auto& p : policy_args) policies.push_back(parse_k_policy(p));
  if (policies.empty()) {
    policies = default_sweep_policies(
        cfg.k_policy.kind == KPolicy::Kind::dynamic ? cfg.k_policy.threshold : 0.8);
  }
  const auto rules = load_corpus(cfg);
  Session s = open_session(cfg);
  PipelineConfig pc = pipeline_config(cfg);
  for (const auto& p : policies)
    if (p.kind == KPolicy::Kind::fixed) pc.recommend_k = std::max(pc.recommend_k, p.k);
  const auto results = run_corpus(rules, s.deps, pc, cfg.concurrency);

  ExperimentManifest m = make_manifest(s, "sweep", corpus_hash(rules));
  std::string list;
  for (const auto& p : policies) list += (list.empty() ? "" : ",") + format_k_policy(p);
  m.policy = list;
  m.params["recommend_k"] = std::to_string(pc.recommend_k);
  const auto sweep = sweep_k(results, gold_map(rules), policies, cfg.semantics,
                             {{"mode", m.mode}, {"backend", m.backend_id}, {"kb", m.kb_version}});
  std::cout << emit_sweep(sweep, cfg.format);
  if (!sweep.empty()) print_skips(sweep.front().report);
  if (!out_dir.empty()) {
    const std::filesystem::path dir = out_dir;
    std::map<std::string, std::string> files = {
        {"results.jsonl", results_jsonl(results)},
        {"sweep.json", emit_sweep(sweep, ReportFormat::structured)},
        {"sweep.csv", emit_sweep(sweep, ReportFormat::tabular)},
        {"sweep.txt", emit_sweep(sweep, ReportFormat::human)}};
    for (const auto& [name, data] : files) write_out(dir / name, data);
    write_manifest(dir / "manifest.json", m, files);
  }
  return failures(results) ? kPartial : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Map SIEM detection rules to MITRE ATT&CK techniques"};
  app.require_subcommand(1);

  std::string bundle, snapshot_out;
  bool data_sources = false;
  auto* ingest = app.add_subcommand("ingest-attack", "Convert a STIX bundle into a KB snapshot");
  ingest->add_option("bundle", bundle, "enterprise-attack.json")->required();
  ingest->add_option("-o,--out", snapshot_out, "snapshot path")->required();
  ingest->add_flag("--include-data-sources", data_sources, "also store data sources as documents");

  std::string corpus_root, corpus_cutoff, corpus_domain, corpus_out;
  bool skip_invalid = false;
  auto* corpus = app.add_subcommand("build-corpus", "Load and filter a detection-rule tree");
  corpus->add_option("root", corpus_root, "rule directory")->required();
  corpus->add_option("--cutoff", corpus_cutoff, "keep rules created or modified on/after this date");
  corpus->add_option("--domain", corpus_domain, "keep one security domain");
  corpus->add_option("-o,--out", corpus_out, "write the corpus manifest (JSON lines)");
  corpus->add_flag("--skip-invalid", skip_invalid, "skip unparseable files instead of failing");

  CommonFlags map_flags, eval_flags, ablate_flags, sweep_flags;
  std::string rule_path, map_out, out_dir_eval, out_dir_ablate, out_dir_sweep;
  std::string corpus_eval, corpus_ablate, corpus_sweep;
  bool rationales = false;
  std::vector<std::string> policies;

  auto* map = app.add_subcommand("map", "Map one rule");
  map->add_option("rule", rule_path, "rule YAML")->required();
  map->add_option("-o,--out", map_out, "write the full result record");
  map->add_flag("--rationales", rationales, "print the reasoning for each technique");
  add_common(map, map_flags);

  auto* evaluate = app.add_subcommand("evaluate", "Score the pipeline on a labeled corpus");
  evaluate->add_option("--corpus", corpus_eval, "rule directory");
  evaluate->add_option("--out-dir", out_dir_eval, "report directory");
  add_common(evaluate, eval_flags);

  auto* ablate = app.add_subcommand("ablate", "Compare the three rule-description modes");
  ablate->add_option("--corpus", corpus_ablate, "rule directory");
  ablate->add_option("--out-dir", out_dir_ablate, "report directory");
  add_common(ablate, ablate_flags);

  auto* sweep = app.add_subcommand("sweep", "Evaluate several recommendation counts");
  sweep->add_option("--corpus", corpus_sweep, "rule directory");
  sweep->add_option("--out-dir", out_dir_sweep, "report directory");
  sweep->add_option("--policy", policies, "policy to evaluate (repeatable); default 1,3,..,13 + dynamic");
  add_common(sweep, sweep_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  auto with_corpus = [](const CommonFlags& f, const std::string& root) {
    RunConfig cfg = resolve_config(f);
    if (!root.empty()) cfg.corpus_root = root;
    return cfg;
  };

  try {
    if (*ingest) return cmd_ingest(bundle, snapshot_out, data_sources);
    if (*corpus) return cmd_build_corpus(corpus_root, corpus_cutoff, corpus_domain, corpus_out, skip_invalid);
    if (*map) return cmd_map(resolve_config(map_flags), rule_path, map_out, rationales);
    if (*evaluate) return cmd_evaluate(with_corpus(eval_flags, corpus_eval), out_dir_eval);
    if (*ablate) return cmd_ablate(with_corpus(ablate_flags, corpus_ablate), out_dir_ablate);
    if (*sweep) return cmd_sweep(with_corpus(sweep_flags, corpus_sweep), policies, out_dir_sweep);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kOk;
}
