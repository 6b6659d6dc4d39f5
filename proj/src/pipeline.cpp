#include "siemmap/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "siemmap/error.hpp"
#include "siemmap/prompts.hpp"
#include "siemmap/structured_output.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Small types

void IocSet::add(const std::string& kind, const std::string& value) {
  const std::string k(trim(kind));
  const std::string v(trim(value));
  if (k.empty() || v.empty()) return;
  auto& values = entries_[k];
  if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
}

std::size_t IocSet::value_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [k, v] : entries_) n += v.size();
  return n;
}

std::string_view mode_name(AblationMode m) noexcept {
  switch (m) {
    case AblationMode::rule_as_is: return "rule_as_is";
    case AblationMode::no_context: return "no_context";
    case AblationMode::with_context: return "with_context";
  }
  return "with_context";
}

std::string_view mode_label(AblationMode m) noexcept {
  switch (m) {
    case AblationMode::rule_as_is: return "Rule as-is";
    case AblationMode::no_context: return "Rule description w/o contextual information";
    case AblationMode::with_context: return "Rule description with contextual information";
  }
  return "";
}

AblationMode parse_mode(std::string_view name) {
  for (auto m : {AblationMode::rule_as_is, AblationMode::no_context, AblationMode::with_context}) {
    if (mode_name(m) == name) return m;
  }
  throw Error(Errc::ConfigError, "unknown ablation mode '" + std::string(name) + "'", std::string(name));
}

std::string_view confidence_method_name(ConfidenceMethod m) noexcept {
  return m == ConfidenceMethod::model ? "model" : "embedding";
}

ConfidenceMethod parse_confidence_method(std::string_view name) {
  if (name == "model") return ConfidenceMethod::model;
  if (name == "embedding") return ConfidenceMethod::embedding;
  throw Error(Errc::ConfigError, "unknown confidence method '" + std::string(name) + "'",
              std::string(name));
}

namespace {

constexpr const char* kEpoch = "1970-01-01T00:00:00Z";

[[noreturn]] void stage_failed(std::string_view stage, const std::string& why, std::string raw = {}) {
  throw Error(Errc::StageFailed, std::string(stage) + ": " + why, raw.empty() ? std::string(stage) : raw);
}

bool is_parse_error(const Error& e) {
  return e.code() == Errc::UnparseableOutput || e.code() == Errc::SchemaMismatch;
}

std::string json_scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return v.dump();
}

std::string str_or_empty(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  return json_scalar_text(*it);
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage 1

IocSet extract_iocs(const SiemRule& rule, Gateway& gateway) {
  if (trim(rule.search).empty()) stage_failed("ioc_extract", "rule has empty search text");
  const std::string prompt = render(prompts::ioc_extract(), "SIEM rule:\n" + rule.search);
  const ModelReply reply = gateway.complete(Stage::ioc_extract, prompt);
  json parsed;
  try {
    parsed = parse_structured(reply.text, Schema::map(Schema::any()));
  } catch (const Error& e) {
    if (!is_parse_error(e)) throw;
    stage_failed("ioc_extract", e.what(), reply.text);
  }
  IocSet iocs;
  for (const auto& [kind, values] : parsed.items()) {
    if (values.is_array()) {
      for (const auto& v : values) iocs.add(kind, json_scalar_text(v));
    } else {
      iocs.add(kind, json_scalar_text(values));
    }
  }
  return iocs;
}

// ---------------------------------------------------------------------------
// Enrichment cache

namespace {

json context_to_json(const IocContext& c) {
  return {{"kind", c.ioc_kind},       {"value", c.ioc_value},         {"summary", c.summary},
          {"sources", c.sources},     {"retrieved_at", c.retrieved_at}, {"degraded", c.degraded}};
}

IocContext context_from_json(const json& j) {
  return {j.at("kind"), j.at("value"), j.at("summary"), j.at("sources").get<std::vector<std::string>>(),
          j.at("retrieved_at"), j.value("degraded", false)};
}

}  // namespace

EnrichmentCache::EnrichmentCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      IocContext c = context_from_json(json::parse(line));
      entries_[{c.ioc_kind, c.ioc_value}] = std::move(c);
    } catch (const json::exception& e) {
      throw Error(Errc::IoError, "corrupt enrichment cache " + path_.string() + ": " + e.what(),
                  path_.string());
    }
  }
}

std::optional<IocContext> EnrichmentCache::find(const std::string& kind, const std::string& value) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find({kind, value});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EnrichmentCache::put(const IocContext& ctx) {
  std::lock_guard lock(mu_);
  entries_[{ctx.ioc_kind, ctx.ioc_value}] = ctx;
  if (path_.empty()) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  out << context_to_json(ctx).dump() << '\n';
}

std::size_t EnrichmentCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Stage 2

namespace {

std::string format_hits(const std::vector<SearchHit>& hits) {
  if (hits.empty()) return "(no results)\n";
  std::string out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    out += std::to_string(i + 1) + ". " + hits[i].title + " <" + hits[i].url + ">\n   " +
           hits[i].snippet + "\n";
  }
  return out;
}

IocContext enrich_one(const std::string& kind, const std::string& value, SearchTool* search,
                      Gateway& gateway, unsigned max_iterations, std::vector<std::string>& warnings,
                      unsigned& tool_calls) {
  IocContext ctx{kind, value, {}, {}, {}, false};
  std::string scratchpad;
  std::vector<SearchHit> seen;
  std::string last_thought;
  unsigned searches = 0;
  const Schema schema = Schema::object({{"action", Schema::string(), true}});

  // max_iterations searches, plus one turn to write the summary
  for (unsigned turn = 0; turn <= max_iterations; ++turn) {
    const unsigned remaining = max_iterations - searches;
    std::string input = "IoC type: " + kind + "\nIoC value: " + value + "\n\nScratchpad:\n" +
                        (scratchpad.empty() ? std::string("(empty)\n") : scratchpad) +
                        "\nSearches remaining: " + std::to_string(remaining);
    if (remaining == 0) input += "\nNo searches remain; finish now.";
    const ModelReply reply = gateway.complete(Stage::context_retrieve, render(prompts::context_agent(), input));
    json step;
    try {
      step = parse_structured(reply.text, schema);
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw;
      warnings.push_back("context_retrieve: unusable agent reply for " + kind + " '" + value + "'");
      break;
    }
    const std::string action = to_lower(str_or_empty(step, "action"));
    const std::string thought = str_or_empty(step, "thought");
    if (!thought.empty()) last_thought = thought;
    if (action == "finish") {
      ctx.summary = std::string(trim(str_or_empty(step, "summary")));
      break;
    }
    const std::string query = str_or_empty(step, "query");
    scratchpad += "Thought: " + thought + "\nAction: search[" + query + "]\nObservation:\n";
    if (action != "search" || query.empty() || remaining == 0 || search == nullptr) {
      scratchpad += remaining == 0 ? "(search budget exhausted)\n" : "(invalid action)\n";
      if (search == nullptr && action == "search") {
        ctx.degraded = true;
        scratchpad += "(no search tool available)\n";
      }
      continue;
    }
    ++searches;
    ++tool_calls;
    try {
      auto hits = search->search(query);
      if (hits.size() > SearchTool::kMaxHits) hits.resize(SearchTool::kMaxHits);
      scratchpad += format_hits(hits);
      for (auto& h : hits) seen.push_back(std::move(h));
    } catch (const Error& e) {
      if (e.code() != Errc::ToolUnavailable) throw;
      ctx.degraded = true;
      warnings.push_back("context_retrieve: search unavailable for '" + value + "': " + e.what());
      scratchpad += "(search tool unavailable)\n";
    }
  }

  for (const auto& h : seen) {
    if (!h.url.empty() && std::find(ctx.sources.begin(), ctx.sources.end(), h.url) == ctx.sources.end()) {
      ctx.sources.push_back(h.url);
    }
  }
  if (ctx.summary.empty() && !ctx.sources.empty()) {
    // the agent never summarized; fall back to what it read
    ctx.summary = !last_thought.empty() ? last_thought : seen.front().snippet;
    if (ctx.summary.empty()) ctx.summary = seen.front().title;
  }
  return ctx;
}

}  // namespace

EnrichmentOutcome enrich_context(const IocSet& iocs, SearchTool* search, Gateway& gateway,
                                 unsigned max_iterations, EnrichmentCache* cache,
                                 const std::function<std::string()>& clock) {
  EnrichmentOutcome out;
  for (const auto& [kind, values] : iocs.entries()) {
    for (const auto& value : values) {
      if (cache) {
        if (auto hit = cache->find(kind, value)) {
          out.contexts.push_back(std::move(*hit));
          continue;
        }
      }
      IocContext ctx = enrich_one(kind, value, search, gateway, max_iterations, out.warnings, out.tool_calls);
      ctx.retrieved_at = clock ? clock() : kEpoch;
      if (cache && !ctx.degraded) cache->put(ctx);
      out.contexts.push_back(std::move(ctx));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 3

std::string translate_input(const SiemRule& rule, const std::vector<IocContext>& contexts,
                            AblationMode mode) {
  if (mode == AblationMode::rule_as_is) return {};
  std::string input = "SIEM rule:\n" + rule.search;
  if (mode == AblationMode::with_context) {
    std::string lines;
    for (const auto& c : contexts) {
      if (c.summary.empty()) continue;
      lines += "- " + c.ioc_kind + " " + c.ioc_value + ": " + c.summary + "\n";
    }
    input += "\n\nContextual information:\n" + (lines.empty() ? std::string("(none found)\n") : lines);
  }
  return input;
}

RuleDescription translate_rule(const SiemRule& rule, const std::vector<IocContext>& contexts,
                               AblationMode mode, Gateway& gateway) {
  if (trim(rule.search).empty()) stage_failed("translate", "rule has empty search text");
  if (mode == AblationMode::rule_as_is) return {rule.search, false};

  const std::string input = translate_input(rule, contexts, mode);
  const ModelReply reply = gateway.complete(Stage::translate, render(prompts::translate(), input));
  json parsed;
  try {
    parsed = parse_structured(reply.text, Schema::object({{"description", Schema::string(), true}}));
  } catch (const Error& e) {
    if (!is_parse_error(e)) throw;
    stage_failed("translate", e.what(), reply.text);
  }
  std::string text(trim(parsed["description"].get<std::string>()));
  if (text.empty()) stage_failed("translate", "model returned an empty description", reply.text);
  const bool used = mode == AblationMode::with_context &&
                    std::any_of(contexts.begin(), contexts.end(),
                                [](const IocContext& c) { return !c.summary.empty(); });
  return {std::move(text), used};
}

// ---------------------------------------------------------------------------
// Stage 4

namespace {

std::string doc_listing(const std::vector<RetrievalResult>& hits, const AttackKb& kb) {
  std::string out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const DetectionDoc* doc = kb.find_doc(hits[i].doc_id);
    std::string content = hits[i].text;
    if (content.size() > 600) content = content.substr(0, 600) + "...";
    out += "[" + std::to_string(i + 1) + "] doc_id: " + hits[i].doc_id + "\nkind: " +
           std::string(doc ? doc_kind_name(doc->kind) : "unknown") + "\nname: " +
           (doc ? doc->name : std::string{}) + "\ncontent: " + content + "\n\n";
  }
  return out;
}

/// Resolves the model's choice against the retrieved set by id, then by name.
const DetectionDoc* resolve_choice(const std::string& choice, const std::vector<RetrievalResult>& hits,
                                   const AttackKb& kb) {
  const std::string want = to_lower(trim(choice));
  if (want.empty()) return nullptr;
  for (const auto& h : hits) {
    if (to_lower(h.doc_id) == want) return kb.find_doc(h.doc_id);
  }
  for (const auto& h : hits) {
    const DetectionDoc* doc = kb.find_doc(h.doc_id);
    if (doc && to_lower(doc->name) == want) return doc;
  }
  return nullptr;
}

}  // namespace

DetectionAnchor identify_anchor(const RuleDescription& desc, const VectorIndex& index,
                                const Embedder& embedder, const AttackKb& kb, Gateway& gateway,
                                std::size_t retrieval_k) {
  const std::string rule_part = "Rule description:\n" + desc.text;

  std::string query = desc.text;
  {
    const ModelReply reply = gateway.complete(Stage::datasource_id, render(prompts::anchor_query(), rule_part));
    try {
      auto parsed = parse_structured(reply.text, Schema::object({{"query", Schema::string(), true}}));
      if (auto q = std::string(trim(parsed["query"].get<std::string>())); !q.empty()) query = q;
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw;
      // fall back to the description itself as the retrieval query
    }
  }

  const auto hits = index.retrieve(query, retrieval_k, embedder);
  if (hits.empty()) stage_failed("datasource_id", "retrieval returned no documents");

  DetectionAnchor anchor;
  anchor.query = query;
  for (const auto& h : hits) anchor.retrieved.push_back(h.doc_id);

  const std::string base_input = rule_part + "\n\nRetrieved documents:\n" + doc_listing(hits, kb);
  const Schema schema = Schema::object({{"doc_id", Schema::string(), true}});
  std::string last_choice;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string input = base_input;
    if (attempt == 1) {
      std::string ids;
      for (const auto& h : hits) ids += (ids.empty() ? "" : ", ") + h.doc_id;
      input += "Correction:\nYour previous answer \"" + last_choice +
               "\" is not one of the retrieved documents. Choose exactly one doc_id from: " + ids;
    }
    const ModelReply reply = gateway.complete(Stage::datasource_id, render(prompts::anchor_select(), input));
    json parsed;
    try {
      parsed = parse_structured(reply.text, schema);
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw;
      last_choice = "(unparseable reply)";
      continue;
    }
    last_choice = str_or_empty(parsed, "doc_id");
    if (const DetectionDoc* doc = resolve_choice(last_choice, hits, kb)) {
      anchor.kind = doc->kind;
      anchor.doc_id = doc->id;
      anchor.name = doc->name;
      anchor.rationale = std::string(trim(str_or_empty(parsed, "rationale")));
      return anchor;
    }
  }
  throw Error(Errc::StageFailed,
              "datasource_id: SelectionOutOfSet: model chose \"" + last_choice +
                  "\" which is not among the retrieved documents",
              last_choice);
}

// ---------------------------------------------------------------------------
// Stage 5

namespace {

std::string anchor_section(const DetectionAnchor& anchor, const AttackKb& kb, std::size_t limit) {
  std::string kind_label = anchor.kind == DocKind::mitigation ? "mitigation" : "data component";
  if (anchor.kind == DocKind::data_source) kind_label = "data source";
  std::string out = "\n\nRelevant " + kind_label + ": " + anchor.name + " (" + anchor.doc_id + ")";
  if (!anchor.rationale.empty()) out += "\nWhy: " + anchor.rationale;
  if (const DetectionDoc* doc = kb.find_doc(anchor.doc_id); doc && !doc->related_techniques.empty()) {
    out += "\nTechniques linked to it in ATT&CK:";
    std::size_t n = 0;
    for (const auto& id : doc->related_techniques) {
      const Technique* t = kb.find(id);
      if (!t || !t->active()) continue;
      if (n++ == limit) {
        out += "\n- ...";
        break;
      }
      out += "\n- " + id.str() + " " + t->name;
    }
  }
  return out;
}

}  // namespace

RecommendOutcome recommend_techniques(const RuleDescription& desc,
                                      const std::optional<DetectionAnchor>& anchor,
                                      const AttackKb& kb, Gateway& gateway, std::size_t k,
                                      unsigned max_kb_searches, std::size_t kb_search_limit,
                                      std::size_t anchor_related_limit) {
  if (trim(desc.text).empty()) stage_failed("recommend", "empty rule description");
  if (k == 0) throw Error(Errc::ConfigError, "recommend k must be positive");
  RecommendOutcome out;

  std::string fixed = "Rule description:\n" + desc.text;
  if (anchor) fixed += anchor_section(*anchor, kb, anchor_related_limit);
  fixed += "\n\nNumber of techniques requested: " + std::to_string(k);

  std::string scratchpad;
  unsigned searches = 0;
  const Schema schema = Schema::object({{"action", Schema::string(), true}});
  std::optional<json> final_list;
  std::string last_raw;

  for (unsigned turn = 0; turn <= max_kb_searches; ++turn) {
    const unsigned remaining = max_kb_searches - searches;
    std::string input = fixed + "\n\nScratchpad:\n" +
                        (scratchpad.empty() ? std::string("(empty)\n") : scratchpad) +
                        "\nKnowledge-base searches remaining: " + std::to_string(remaining);
    if (remaining == 0) input += "\nNo knowledge-base searches remain; finish now.";
    const ModelReply reply = gateway.complete(Stage::recommend, render(prompts::recommend_agent(), input));
    last_raw = reply.text;
    json step;
    try {
      step = parse_structured(reply.text, schema);
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw;
      stage_failed("recommend", e.what(), reply.text);
    }
    const std::string action = to_lower(str_or_empty(step, "action"));
    if (action == "finish") {
      auto t = step.find("techniques");
      final_list = (t != step.end() && t->is_array()) ? *t : json::array();
      break;
    }
    const std::string query = str_or_empty(step, "query");
    scratchpad += "Thought: " + str_or_empty(step, "thought") + "\nAction: search_kb[" + query +
                  "]\nObservation:\n";
    if (action != "search_kb" || query.empty() || remaining == 0) {
      scratchpad += remaining == 0 ? "(search budget exhausted)\n" : "(invalid action)\n";
      continue;
    }
    ++searches;
    ++out.tool_calls;
    const auto found = kb.search(query, kb_search_limit);
    if (found.empty()) scratchpad += "(no matches)\n";
    for (const Technique* t : found) scratchpad += "- " + t->id.str() + " " + t->name + "\n";
  }
  if (!final_list) stage_failed("recommend", "agent did not finish within its turn budget", last_raw);

  std::set<TechniqueId> seen;
  for (const auto& item : *final_list) {
    if (out.candidates.size() == k) break;
    const std::string raw = item.is_object() ? str_or_empty(item, "id") : json_scalar_text(item);
    auto id = TechniqueId::try_parse(raw);
    if (!id) {
      out.warnings.push_back("recommend: dropped invalid technique id '" + raw + "'");
      continue;
    }
    const Technique* t = kb.find(*id);
    if (!t) {
      out.warnings.push_back("recommend: dropped unknown technique " + id->str());
      continue;
    }
    if (!t->active()) {
      out.warnings.push_back("recommend: dropped revoked or deprecated technique " + id->str());
      continue;
    }
    if (!seen.insert(*id).second) continue;
    out.candidates.push_back({t->id, t->name, t->description});
  }
  if (out.candidates.empty()) stage_failed("recommend", "no valid candidate techniques", last_raw);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 6

std::vector<Recommendation> select_recommendations(const std::vector<ScoredCandidate>& scored,
                                                   double threshold) {
  std::vector<Recommendation> out;
  for (const auto& s : scored) {
    if (s.confidence && *s.confidence >= threshold) out.push_back({s.id, s.rationale, *s.confidence});
  }
  std::sort(out.begin(), out.end(), [](const Recommendation& a, const Recommendation& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.id < b.id;
  });
  return out;
}

FilterOutcome filter_relevant(const RuleDescription& desc,
                              const std::vector<CandidateTechnique>& candidates, Gateway& gateway,
                              double threshold, ConfidenceMethod method, const Embedder* embedder) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(Errc::ConfigError, "threshold must lie in [0, 1]");
  }
  if (method == ConfidenceMethod::embedding && embedder == nullptr) {
    throw Error(Errc::ConfigError, "embedding confidence needs an embedder");
  }
  FilterOutcome out;
  std::optional<Embedding> desc_vec;
  for (const auto& cand : candidates) {
    ScoredCandidate sc{cand.id, {}, std::nullopt, {}};
    const std::string technique_line = "Technique: " + cand.id.str() + " - " + cand.name;

    const std::string cmp_input = "Rule description:\n" + desc.text + "\n\n" + technique_line +
                                  "\nTechnique description:\n" + cand.description;
    const ModelReply cmp = gateway.complete(Stage::compare, render(prompts::compare(), cmp_input));
    try {
      auto parsed = parse_structured(cmp.text, Schema::object({{"rationale", Schema::string(), true}}));
      sc.rationale = std::string(trim(parsed["rationale"].get<std::string>()));
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw;
    }
    if (sc.rationale.empty()) {
      sc.error = "comparison produced no rationale";
      out.warnings.push_back("relevance: " + cand.id.str() + " excluded, " + sc.error);
      out.scored.push_back(std::move(sc));
      continue;
    }

    if (method == ConfidenceMethod::model) {
      const std::string score_input = "Rule description:\n" + desc.text + "\n\n" + technique_line +
                                      "\nReasoning:\n" + sc.rationale;
      const ModelReply sr = gateway.complete(Stage::score, render(prompts::score(), score_input));
      try {
        auto parsed = parse_structured(sr.text, Schema::object({{"confidence", Schema::number(), true}}));
        const double c = parsed["confidence"].get<double>();
        if (std::isfinite(c) && c >= 0.0 && c <= 1.0) {
          sc.confidence = c;
        } else {
          sc.error = "confidence outside [0, 1]";
        }
      } catch (const Error& e) {
        if (!is_parse_error(e)) throw;
        sc.error = "unusable confidence reply";
      }
    } else {
      try {
        if (!desc_vec) desc_vec = embed(desc.text, *embedder);
        const double c = cosine(embed(sc.rationale, *embedder).values, desc_vec->values);
        sc.confidence = std::clamp((c + 1.0) / 2.0, 0.0, 1.0);
      } catch (const Error& e) {
        if (e.code() != Errc::EmptyText) throw;
        sc.error = "empty text for embedding";
      }
    }
    if (!sc.confidence) out.warnings.push_back("relevance: " + cand.id.str() + " excluded, " + sc.error);
    out.scored.push_back(std::move(sc));
  }
  out.recommendations = select_recommendations(out.scored, threshold);
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

class StageTimer {
 public:
  StageTimer(MappingResult& result, std::string stage)
      : result_(result), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    result_.stage_timings_ms[stage_] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  MappingResult& result_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void append(std::vector<std::string>& to, const std::vector<std::string>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

}  // namespace

MappingResult run_pipeline(const SiemRule& rule, const PipelineDeps& deps, const PipelineConfig& config) {
  MappingResult result;
  result.rule_id = rule.id;
  result.mode = config.mode;
  result.confidence_method = config.confidence;

  std::string stage = "config";
  try {
    if (!deps.kb || !deps.gateway) throw Error(Errc::ConfigError, "pipeline needs a KB and a gateway");
    Gateway& gw = *deps.gateway;

    if (config.mode == AblationMode::with_context) {
      stage = "ioc_extract";
      {
        StageTimer t(result, stage);
        result.iocs = extract_iocs(rule, gw);
      }
      stage = "context_retrieve";
      {
        StageTimer t(result, stage);
        auto enriched = enrich_context(result.iocs, deps.search.get(), gw, config.max_search_iterations,
                                       deps.enrichment_cache.get(), deps.clock);
        result.contexts = std::move(enriched.contexts);
        append(result.warnings, enriched.warnings);
      }
    }

    stage = "translate";
    {
      StageTimer t(result, stage);
      result.description = translate_rule(rule, result.contexts, config.mode, gw);
    }

    stage = "datasource_id";
    if (deps.index && deps.embedder) {
      StageTimer t(result, stage);
      result.anchor = identify_anchor(*result.description, *deps.index, *deps.embedder, *deps.kb, gw,
                                      config.retrieval_k);
    } else {
      result.warnings.push_back("datasource_id: skipped, no vector index configured");
    }

    stage = "recommend";
    {
      StageTimer t(result, stage);
      auto rec = recommend_techniques(*result.description, result.anchor, *deps.kb, gw, config.recommend_k,
                                      config.max_kb_searches, config.kb_search_limit,
                                      config.anchor_related_limit);
      result.candidates = std::move(rec.candidates);
      append(result.warnings, rec.warnings);
    }

    stage = "relevance";
    {
      StageTimer t(result, stage);
      auto filtered = filter_relevant(*result.description, result.candidates, gw, config.threshold,
                                      config.confidence, deps.embedder.get());
      result.scored = std::move(filtered.scored);
      result.recommendations = std::move(filtered.recommendations);
      append(result.warnings, filtered.warnings);
    }
  } catch (const Error& e) {
    result.failure = StageFailure{stage, e.code(), e.what()};
  }
  return result;
}

std::vector<MappingResult> run_corpus(const std::vector<SiemRule>& rules, const PipelineDeps& deps,
                                      const PipelineConfig& config, unsigned concurrency) {
  std::vector<MappingResult> results(rules.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rules.size(); i = next++) {
      results[i] = run_pipeline(rules[i], deps, config);
    }
  };
  const unsigned width = std::clamp<unsigned>(concurrency, 1, std::max<std::size_t>(rules.size(), 1));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < width; ++t) pool.emplace_back(worker);
  worker();
  return results;
}

// ---------------------------------------------------------------------------
// Serialization

json result_to_json(const MappingResult& r, bool include_timings) {
  json iocs = json::object();
  for (const auto& [k, v] : r.iocs.entries()) iocs[k] = v;
  json contexts = json::array();
  for (const auto& c : r.contexts) contexts.push_back(context_to_json(c));
  json candidates = json::array();
  for (const auto& c : r.candidates) {
    candidates.push_back({{"id", c.id.str()}, {"name", c.name}, {"description", c.description}});
  }
  json scored = json::array();
  for (const auto& s : r.scored) {
    scored.push_back({{"id", s.id.str()},
                      {"rationale", s.rationale},
                      {"confidence", s.confidence ? json(*s.confidence) : json()},
                      {"error", s.error}});
  }
  json recs = json::array();
  for (const auto& rec : r.recommendations) {
    recs.push_back({{"id", rec.id.str()}, {"rationale", rec.rationale}, {"confidence", rec.confidence}});
  }
  json out = {
      {"rule_id", r.rule_id},
      {"mode", mode_name(r.mode)},
      {"status", r.ok() ? "ok" : "failed"},
      {"failure", r.failure ? json{{"stage", r.failure->stage},
                                   {"code", errc_name(r.failure->code)},
                                   {"message", r.failure->message}}
                            : json()},
      {"iocs", iocs},
      {"contexts", contexts},
      {"description", r.description ? json{{"text", r.description->text},
                                           {"used_context", r.description->used_context}}
                                    : json()},
      {"anchor", r.anchor ? json{{"kind", doc_kind_name(r.anchor->kind)},
                                 {"doc_id", r.anchor->doc_id},
                                 {"name", r.anchor->name},
                                 {"rationale", r.anchor->rationale},
                                 {"query", r.anchor->query},
                                 {"retrieved", r.anchor->retrieved}}
                          : json()},
      {"candidates", candidates},
      {"scored", scored},
      {"recommendations", recs},
      {"confidence_method", confidence_method_name(r.confidence_method)},
      {"warnings", r.warnings}};
  if (include_timings) out["stage_timings_ms"] = r.stage_timings_ms;
  return out;
}

namespace {

Errc errc_from_name(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(Errc::IoError); ++i) {
    if (errc_name(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
  }
  return Errc::StageFailed;
}

}  // namespace

MappingResult result_from_json(const json& j) {
  MappingResult r;
  try {
    r.rule_id = j.at("rule_id");
    r.mode = parse_mode(j.at("mode").get<std::string>());
    if (const auto& f = j.at("failure"); !f.is_null()) {
      r.failure = StageFailure{f.at("stage"), errc_from_name(f.at("code")), f.at("message")};
    }
    for (const auto& [k, values] : j.at("iocs").items()) {
      for (const auto& v : values) r.iocs.add(k, v.get<std::string>());
    }
    for (const auto& c : j.at("contexts")) r.contexts.push_back(context_from_json(c));
    if (const auto& d = j.at("description"); !d.is_null()) {
      r.description = RuleDescription{d.at("text"), d.at("used_context")};
    }
    if (const auto& a = j.at("anchor"); !a.is_null()) {
      r.anchor = DetectionAnchor{parse_doc_kind(a.at("kind").get<std::string>()), a.at("doc_id"), a.at("name"),
                                 a.at("rationale"), a.value("query", ""),
                                 a.at("retrieved").get<std::vector<std::string>>()};
    }
    for (const auto& c : j.at("candidates")) {
      r.candidates.push_back({TechniqueId::parse(c.at("id").get<std::string>()), c.at("name"), c.at("description")});
    }
    for (const auto& s : j.at("scored")) {
      ScoredCandidate sc{TechniqueId::parse(s.at("id").get<std::string>()), s.at("rationale"), std::nullopt,
                         s.value("error", "")};
      if (!s.at("confidence").is_null()) sc.confidence = s.at("confidence").get<double>();
      r.scored.push_back(std::move(sc));
    }
    for (const auto& rec : j.at("recommendations")) {
      r.recommendations.push_back(
          {TechniqueId::parse(rec.at("id").get<std::string>()), rec.at("rationale"), rec.at("confidence")});
    }
    r.confidence_method = parse_confidence_method(j.value("confidence_method", "model"));
    r.warnings = j.value("warnings", std::vector<std::string>{});
    if (auto t = j.find("stage_timings_ms"); t != j.end()) r.stage_timings_ms = t->get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedDocument, std::string("result record has wrong shape: ") + e.what());
  }
  return r;
}

}  // namespace siemmap
