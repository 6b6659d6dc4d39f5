#include <gtest/gtest.h>

#include <algorithm>

#include "siemmap/attack_kb.hpp"
#include "siemmap/config.hpp"
#include "siemmap/error.hpp"
#include "siemmap/pipeline.hpp"
#include "siemmap/search_tool.hpp"
#include "siemmap/util.hpp"
#include "support.hpp"

using namespace siemmap;
using nlohmann::json;

namespace {

using Table = std::map<Stage, std::vector<FixtureReply>>;

std::shared_ptr<Gateway> gateway(Table table) {
  GatewayConfig cfg;
  cfg.max_attempts = 1;
  return std::make_shared<Gateway>(cfg, std::make_shared<MockBackend>(std::move(table), "unit"));
}

const AttackKb& kb() {
  static const AttackKb k = ingest_stix_file(testsupport::fixture("attack-excerpt.json"));
  return k;
}

SiemRule soaphound() {
  return parse_rule_file(
      read_file(testsupport::fixture("soaphound/rules/windows_soaphound_binary_execution.yml")));
}

Session soaphound_session() { return open_session(testsupport::fixture_config("soaphound")); }

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

class AlwaysDown final : public SearchTool {
 public:
  std::vector<SearchHit> search(std::string_view) override {
    ++calls;
    throw Error(Errc::ToolUnavailable, "down");
  }
  int calls = 0;
};

std::vector<CandidateTechnique> cands(std::initializer_list<const char*> list) {
  std::vector<CandidateTechnique> out;
  for (const char* s : list) out.push_back({parse_technique_id(s), s, ""});
  return out;
}

}  // namespace

TEST(ExtractIocs, SoaphoundFixture) {
  auto s = soaphound_session();
  auto iocs = extract_iocs(soaphound(), *s.deps.gateway);
  const auto& e = iocs.entries();
  EXPECT_EQ(e.at("processes"), std::vector<std::string>{"soaphound.exe"});
  EXPECT_TRUE(contains(e.at("command_line_arguments"), "--buildcache"));
  EXPECT_TRUE(contains(e.at("command_line_arguments"), "--certdump"));
  EXPECT_TRUE(contains(e.at("data_models"), "Endpoint.Processes"));
}

TEST(ExtractIocs, EmptyAndDuplicates) {
  auto gw = gateway({{Stage::ioc_extract, {{{"EMPTY"}, "{}"}, {{}, R"({"files": ["a.exe", "a.exe", "b.exe"]})"}}}});
  SiemRule r;
  r.search = "EMPTY";
  EXPECT_TRUE(extract_iocs(r, *gw).empty());
  r.search = "other";
  EXPECT_EQ(extract_iocs(r, *gw).entries().at("files"), (std::vector<std::string>{"a.exe", "b.exe"}));
}

TEST(ExtractIocs, UnusableReplyFailsStage) {
  auto gw = gateway({{Stage::ioc_extract, {{{}, "I cannot help with that."}}}});
  SiemRule r;
  r.search = "x";
  try {
    extract_iocs(r, *gw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::StageFailed);
    EXPECT_NE(std::string(e.what()).find("ioc_extract"), std::string::npos);
  }
}

TEST(EnrichContext, SoaphoundSummary) {
  auto s = soaphound_session();
  IocSet iocs;
  iocs.add("processes", "soaphound.exe");
  auto out = enrich_context(iocs, s.deps.search.get(), *s.deps.gateway, 3);
  ASSERT_EQ(out.contexts.size(), 1u);
  EXPECT_NE(out.contexts[0].summary.find("Active Directory enumeration"), std::string::npos);
  EXPECT_FALSE(out.contexts[0].sources.empty());
  EXPECT_EQ(out.tool_calls, 1u);
}

TEST(EnrichContext, EmptySet) {
  auto s = soaphound_session();
  EXPECT_TRUE(enrich_context(IocSet{}, s.deps.search.get(), *s.deps.gateway, 3).contexts.empty());
}

TEST(EnrichContext, ToolDownDegrades) {
  auto gw = gateway({{Stage::context_retrieve,
                      {{{"Scratchpad:\nThought"}, R"({"action": "finish", "summary": ""})"},
                       {{}, R"({"thought": "look it up", "action": "search", "query": "what is x"})"}}}});
  IocSet iocs;
  iocs.add("files", "x.exe");
  iocs.add("files", "y.exe");
  AlwaysDown tool;
  auto out = enrich_context(iocs, &tool, *gw, 3);
  ASSERT_EQ(out.contexts.size(), 2u);
  for (const auto& c : out.contexts) {
    EXPECT_TRUE(c.sources.empty());
    EXPECT_TRUE(c.degraded);
  }
  EXPECT_FALSE(out.warnings.empty());
  EXPECT_LE(tool.calls, 6);
}

TEST(EnrichContext, IterationCap) {
  auto gw = gateway({{Stage::context_retrieve, {{{}, R"({"action": "search", "query": "again"})"}}}});
  IocSet iocs;
  iocs.add("files", "x.exe");
  FixtureSearchTool tool({{"again", {{"t", "http://e/1", "snippet"}}}});
  auto out = enrich_context(iocs, &tool, *gw, 2);
  EXPECT_EQ(out.tool_calls, 2u);
}

TEST(EnrichContext, CacheAvoidsSecondLookup) {
  auto s = soaphound_session();
  EnrichmentCache cache;
  IocSet iocs;
  iocs.add("processes", "soaphound.exe");
  enrich_context(iocs, s.deps.search.get(), *s.deps.gateway, 3, &cache);
  const auto calls = s.deps.gateway->stats().backend_calls;
  auto again = enrich_context(iocs, s.deps.search.get(), *s.deps.gateway, 3, &cache);
  EXPECT_EQ(s.deps.gateway->stats().backend_calls, calls);
  EXPECT_EQ(again.tool_calls, 0u);
  EXPECT_EQ(cache.size(), 1u);
}

TEST(TranslateRule, RuleAsIsBypassesModel) {
  auto gw = gateway({});
  auto rule = soaphound();
  auto d = translate_rule(rule, {}, AblationMode::rule_as_is, *gw);
  EXPECT_EQ(d.text, rule.search);
  EXPECT_FALSE(d.used_context);
  EXPECT_EQ(gw->stats().backend_calls, 0u);
}

TEST(TranslateRule, WithContextMentionsIoc) {
  auto s = soaphound_session();
  IocContext ctx{"processes", "soaphound.exe", "SOAPHound does AD enumeration", {}, "", false};
  auto d = translate_rule(soaphound(), {ctx}, AblationMode::with_context, *s.deps.gateway);
  EXPECT_TRUE(d.used_context);
  EXPECT_NE(d.text.find("soaphound.exe"), std::string::npos);
}

TEST(TranslateRule, NoContextIgnoresContexts) {
  auto rule = soaphound();
  IocContext ctx{"processes", "soaphound.exe", "SOAPHound does AD enumeration", {}, "", false};
  EXPECT_EQ(sha256_hex(translate_input(rule, {ctx}, AblationMode::no_context)),
            sha256_hex(translate_input(rule, {}, AblationMode::no_context)));
  EXPECT_NE(translate_input(rule, {ctx}, AblationMode::with_context),
            translate_input(rule, {}, AblationMode::with_context));
}

TEST(IdentifyAnchor, SoaphoundCommandExecution) {
  auto s = soaphound_session();
  RuleDescription d{"soaphound.exe runs with enumeration switches", true};
  auto a = identify_anchor(d, *s.deps.index, *s.deps.embedder, *s.kb, *s.deps.gateway);
  EXPECT_EQ(a.kind, DocKind::data_component);
  EXPECT_EQ(a.name, "Command Execution");
  EXPECT_EQ(a.retrieved.size(), 5u);
  EXPECT_TRUE(contains(a.retrieved, a.doc_id));
  EXPECT_FALSE(a.rationale.empty());
}

TEST(IdentifyAnchor, SmallIndexAndCorrectiveReprompt) {
  HashingEmbedder e;
  auto idx = VectorIndex::build({{"DC0064", "command execution"}, {"DC0009", "process creation"},
                                 {"M1038", "execution prevention"}}, e);
  // first answer names an unretrieved doc; the correction prompt gets a valid one
  auto gw = gateway({{Stage::datasource_id,
                      {{{"Correction:"}, R"({"doc_id": "DC0009", "rationale": "process events"})"},
                       {{"Retrieved documents:"}, R"({"doc_id": "DC9999"})"},
                       {{}, R"({"query": "process creation"})"}}}});
  auto a = identify_anchor({"runs a binary", false}, idx, e, kb(), *gw);
  EXPECT_EQ(a.retrieved.size(), 3u);
  EXPECT_EQ(a.doc_id, "DC0009");
  EXPECT_EQ(gw->stats().backend_calls, 3u);

  auto stubborn = gateway({{Stage::datasource_id,
                            {{{"Retrieved documents:"}, R"({"doc_id": "DC9999"})"},
                             {{}, R"({"query": "process creation"})"}}}});
  try {
    identify_anchor({"runs a binary", false}, idx, e, kb(), *stubborn);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::StageFailed);
    EXPECT_NE(std::string(err.what()).find("SelectionOutOfSet"), std::string::npos);
  }
  EXPECT_EQ(stubborn->stats().backend_calls, 3u);
}

TEST(Recommend, ElevenValidIds) {
  const char* eleven = R"({"action": "finish", "techniques": ["T1087.002", "T1482", "T1069.002", "T1087",
      "T1069", "T1087.001", "T1069.001", "T1649", "T1018", "T1059.001", "T1033"]})";
  auto gw = gateway({{Stage::recommend, {{{}, eleven}}}});
  auto out = recommend_techniques({"desc", true}, std::nullopt, kb(), *gw, 11);
  EXPECT_EQ(out.candidates.size(), 11u);
  EXPECT_EQ(out.candidates[1].name, "Domain Trust Discovery");

  auto gw1 = gateway({{Stage::recommend, {{{}, eleven}}}});
  EXPECT_EQ(recommend_techniques({"desc", true}, std::nullopt, kb(), *gw1, 1).candidates.size(), 1u);
}

TEST(Recommend, DropsInvalidAndDuplicates) {
  auto gw = gateway({{Stage::recommend,
                      {{{}, R"({"action": "finish", "techniques": [{"id": "T1482"}, {"id": "T1482"}, {"id": "T9999"}]})"}}}});
  auto out = recommend_techniques({"desc", true}, std::nullopt, kb(), *gw, 11);
  ASSERT_EQ(out.candidates.size(), 1u);
  EXPECT_EQ(out.candidates[0].id.str(), "T1482");
  EXPECT_TRUE(std::any_of(out.warnings.begin(), out.warnings.end(),
                          [](const std::string& w) { return w.find("T9999") != std::string::npos; }));
}

TEST(Recommend, NothingValidFails) {
  auto gw = gateway({{Stage::recommend, {{{}, R"({"action": "finish", "techniques": ["T9999"]})"}}}});
  EXPECT_THROW(recommend_techniques({"desc", true}, std::nullopt, kb(), *gw, 11), Error);
}

TEST(Recommend, AnchorTechniquesReachPrompt) {
  auto gw = gateway({{Stage::recommend,
                      {{{"T1059"}, R"({"action": "finish", "techniques": ["T1059"]})"},
                       {{}, R"({"action": "finish", "techniques": ["T1482"]})"}}}});
  DetectionAnchor a;
  a.doc_id = "DC0064";
  a.name = "Command Execution";
  for (const auto& d : kb().docs()) {
    if (d.id == "DC0064") {
      ASSERT_FALSE(d.related_techniques.empty());
    }
  }
  auto out = recommend_techniques({"desc", true}, a, kb(), *gw, 11);
  ASSERT_EQ(out.candidates.size(), 1u);
  EXPECT_EQ(out.candidates[0].id.str(), "T1059");
}

TEST(Filter, ThresholdArithmetic) {
  auto gw = gateway({{Stage::compare, {{{}, R"({"rationale": "related"})"}}},
                     {Stage::score,
                      {{{"T1003 -"}, R"({"confidence": 0.9})"},
                       {{"T1110 -"}, R"({"confidence": 0.85})"},
                       {{}, R"({"confidence": 0.3})"}}}});
  auto c = cands({"T1003", "T1110", "T1021"});
  auto out = filter_relevant({"desc", true}, c, *gw, 0.8);
  ASSERT_EQ(out.recommendations.size(), 2u);
  EXPECT_EQ(out.recommendations[0].id.str(), "T1003");
  EXPECT_EQ(out.scored.size(), 3u);
  EXPECT_EQ(select_recommendations(out.scored, 0.0).size(), 3u);
}

TEST(Filter, ScoringFailureDropsOneCandidate) {
  auto gw = gateway({{Stage::compare, {{{}, R"({"rationale": "related"})"}}},
                     {Stage::score,
                      {{{"T1003 -"}, "no idea"}, {{"T1021 -"}, R"({"confidence": 1.7})"}, {{}, R"({"confidence": 0.9})"}}}});
  auto out = filter_relevant({"desc", true}, cands({"T1003", "T1021", "T1110"}), *gw, 0.0);
  ASSERT_EQ(out.recommendations.size(), 1u);
  EXPECT_EQ(out.recommendations[0].id.str(), "T1110");
  EXPECT_FALSE(out.scored[0].confidence.has_value());
  EXPECT_FALSE(out.scored[1].confidence.has_value());
  EXPECT_EQ(out.warnings.size(), 2u);
}

TEST(Filter, EmbeddingFallback) {
  auto gw = gateway({{Stage::compare, {{{}, R"({"rationale": "lsass memory dump"})"}}}});
  HashingEmbedder e;
  auto out = filter_relevant({"lsass memory dump", true}, cands({"T1003.001"}), *gw, 0.5,
                             ConfidenceMethod::embedding, &e);
  ASSERT_EQ(out.recommendations.size(), 1u);
  EXPECT_NEAR(out.recommendations[0].confidence, 1.0, 1e-9);
}

TEST(Filter, SoaphoundRationale) {
  auto s = soaphound_session();
  auto out = filter_relevant({"desc", true}, cands({"T1482"}), *s.deps.gateway, 0.8);
  ASSERT_EQ(out.recommendations.size(), 1u);
  EXPECT_NE(to_lower(out.recommendations[0].rationale).find("domain trust discovery"), std::string::npos);
}

TEST(Pipeline, SoaphoundEndToEnd) {
  auto s = soaphound_session();
  auto r = run_pipeline(soaphound(), s.deps, pipeline_config(s.config));
  ASSERT_TRUE(r.ok()) << r.failure->message;
  EXPECT_TRUE(std::any_of(r.recommendations.begin(), r.recommendations.end(),
                          [](const Recommendation& x) { return x.id.str() == "T1482"; }));
  ASSERT_TRUE(r.anchor);
  EXPECT_EQ(r.anchor->name, "Command Execution");
  for (std::size_t i = 1; i < r.recommendations.size(); ++i) {
    EXPECT_GE(r.recommendations[i - 1].confidence, r.recommendations[i].confidence);
  }
  EXPECT_EQ(result_to_json(r).dump(), result_to_json(run_pipeline(soaphound(), s.deps, pipeline_config(s.config))).dump());
}

TEST(Pipeline, RuleAsIsHasNoIocs) {
  auto s = soaphound_session();
  auto cfg = pipeline_config(s.config);
  cfg.mode = AblationMode::rule_as_is;
  auto r = run_pipeline(soaphound(), s.deps, cfg);
  EXPECT_TRUE(r.iocs.empty());
  EXPECT_TRUE(r.contexts.empty());
  ASSERT_TRUE(r.description);
  EXPECT_EQ(r.description->text, soaphound().search);
}

TEST(Pipeline, FailureKeepsCompletedStages) {
  auto gw = gateway({{Stage::ioc_extract, {{{}, R"({"files": ["a.exe"]})"}}},
                     {Stage::context_retrieve, {{{}, R"({"action": "finish", "summary": "s"})"}}},
                     {Stage::translate, {{{}, "not structured at all"}}}});
  PipelineDeps deps;
  deps.kb = std::make_shared<AttackKb>(kb());
  deps.gateway = gw;
  SiemRule rule;
  rule.id = "r";
  rule.search = "x";
  auto r = run_pipeline(rule, deps, PipelineConfig{});
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.failure->stage, "translate");
  EXPECT_FALSE(r.iocs.empty());
  EXPECT_EQ(r.contexts.size(), 1u);
}

TEST(Pipeline, ResultJsonRoundTrip) {
  auto s = soaphound_session();
  auto r = run_pipeline(soaphound(), s.deps, pipeline_config(s.config));
  auto j = result_to_json(r);
  EXPECT_EQ(result_to_json(result_from_json(j)), j);
}

TEST(Pipeline, CorpusKeepsOrder) {
  auto s = open_session(testsupport::fixture_config("ablation"));
  auto corpus = build_corpus(s.config.corpus_root, CorpusFilter{});
  auto serial = run_corpus(corpus.rules, s.deps, pipeline_config(s.config), 1);
  auto parallel = run_corpus(corpus.rules, s.deps, pipeline_config(s.config), 4);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(result_to_json(serial[i]).dump(), result_to_json(parallel[i]).dump());
  }
}
