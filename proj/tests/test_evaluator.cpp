#include <gtest/gtest.h>

#include <random>

#include "siemmap/error.hpp"
#include "siemmap/evaluator.hpp"
#include "support.hpp"

using namespace siemmap;
using testsupport::ids;

namespace {

ScoredCandidate sc(const std::string& id, std::optional<double> conf) {
  return {parse_technique_id(id), "r", conf, ""};
}

MappingResult result(const std::string& rule, std::vector<ScoredCandidate> scored) {
  MappingResult r;
  r.rule_id = rule;
  for (const auto& s : scored) r.candidates.push_back({s.id, "", ""});
  r.scored = std::move(scored);
  return r;
}

}  // namespace

TEST(Match, StrictVersusLenient) {
  EXPECT_TRUE(match(ids({"T1087"}), ids({"T1087.002"}), MatchSemantics::strict).empty());
  EXPECT_EQ(match(ids({"T1087"}), ids({"T1087.002"}), MatchSemantics::parent_lenient), ids({"T1087"}));
  EXPECT_EQ(match(ids({"T1078", "T1110"}), ids({"T1078", "T1021", "T1036"})), ids({"T1078"}));
}

TEST(Match, LenientUsesEachIdOnce) {
  // one parent prediction cannot credit two sub-technique gold labels
  EXPECT_EQ(match(ids({"T1087.001", "T1087.002"}), ids({"T1087"}), MatchSemantics::parent_lenient).size(), 1u);
  // exact matches are kept even when a lenient pairing exists
  EXPECT_EQ(match(ids({"T1087", "T1087.002"}), ids({"T1087.002"}), MatchSemantics::parent_lenient),
            ids({"T1087.002"}));
  // the pairing is maximal
  EXPECT_EQ(match(ids({"T1087", "T1087.002"}), ids({"T1087.002", "T1087.001"}), MatchSemantics::parent_lenient),
            ids({"T1087", "T1087.002"}));
  // siblings never match
  EXPECT_TRUE(match(ids({"T1087.001"}), ids({"T1087.002"}), MatchSemantics::parent_lenient).empty());
}

TEST(Sample, Examples) {
  auto perfect = evaluate_sample(ids({"T1482"}), ids({"T1482"}));
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.precision, 1.0);
  auto s = evaluate_sample(ids({"T1078", "T1110"}), ids({"T1078", "T1021", "T1036"}));
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.precision, 1.0 / 3.0);
  auto none = evaluate_sample(ids({"T1078"}), {});
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.precision, 0.0);
  try {
    evaluate_sample({}, ids({"T1078"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyGold);
  }
}

TEST(Aggregate, WeightedByGoldCount) {
  auto a = evaluate_sample(ids({"T1003"}), ids({"T1003"}));
  auto b = evaluate_sample(ids({"T1087", "T1087.001", "T1087.002"}), ids({"T1110"}));
  auto r = aggregate({a, b});
  EXPECT_DOUBLE_EQ(r.ar, 0.5);
  EXPECT_DOUBLE_EQ(r.war, 0.25);
  EXPECT_THROW(aggregate({}), Error);
}

TEST(Aggregate, F1FromPublishedRows) {
  EXPECT_NEAR(f1_score(0.45, 0.29), 0.35, 0.005);
  EXPECT_NEAR(f1_score(0.62, 0.34), 0.44, 0.005);
  EXPECT_NEAR(f1_score(0.75, 0.39), 0.51, 0.005);
  // the printed dynamic-k F1 (0.62) does not follow from its AR/AP
  EXPECT_NEAR(f1_score(0.75, 0.52), 2 * 0.75 * 0.52 / 1.27, 1e-15);
  EXPECT_EQ(f1_score(0, 0), 0.0);
}

TEST(Aggregate, RandomMatchesOracle) {
  std::mt19937 rng(3);
  auto pool = testsupport::id_pool(rng, 10);
  for (int round = 0; round < 50; ++round) {
    std::vector<SampleEval> samples;
    std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> raw;
    for (int i = 0; i < 6; ++i) {
      std::set<std::string> g, p;
      while (g.empty()) {
        for (const auto& id : pool) if (rng() % 3 == 0) g.insert(id);
      }
      for (const auto& id : pool) if (rng() % 3 == 0) p.insert(id);
      std::set<TechniqueId> gi, pi;
      for (const auto& x : g) gi.insert(parse_technique_id(x));
      for (const auto& x : p) pi.insert(parse_technique_id(x));
      samples.push_back(evaluate_sample(gi, pi));
      raw.push_back({{g.begin(), g.end()}, {p.begin(), p.end()}});
    }
    auto got = aggregate(samples);
    auto want = testsupport::oracle_metrics(raw);
    EXPECT_NEAR(got.ar, want.ar, 1e-12);
    EXPECT_NEAR(got.ap, want.ap, 1e-12);
    EXPECT_NEAR(got.war, want.war, 1e-12);
    EXPECT_NEAR(got.wap, want.wap, 1e-12);
  }
}

TEST(Policy, ParseAndFormat) {
  EXPECT_EQ(parse_k_policy("5"), KPolicy::fixed(5));
  EXPECT_EQ(parse_k_policy("fixed:11"), KPolicy::fixed(11));
  EXPECT_EQ(parse_k_policy("dynamic:0.8"), KPolicy::dynamic(0.8));
  EXPECT_EQ(format_k_policy(KPolicy::dynamic(0.8)), "dynamic:0.8");
  EXPECT_EQ(KPolicy::fixed(11).label(), "11");
  EXPECT_EQ(KPolicy::dynamic(0.8).label(), "dynamic-k");
  for (const char* bad : {"0", "fixed:", "dynamic:1.5", "lots"}) EXPECT_THROW(parse_k_policy(bad), Error) << bad;
}

TEST(Policy, ApplyIgnoresUnscored) {
  std::vector<ScoredCandidate> s = {sc("T1003", 0.5), sc("T1110", 0.9), sc("T1021", std::nullopt),
                                    sc("T1036", 0.9)};
  EXPECT_EQ(apply_policy(s, KPolicy::fixed(1)), ids({"T1036"}));  // tie broken by id
  EXPECT_EQ(apply_policy(s, KPolicy::fixed(10)), ids({"T1003", "T1110", "T1036"}));
  EXPECT_EQ(apply_policy(s, KPolicy::dynamic(0.8)), ids({"T1110", "T1036"}));
}

TEST(Policy, DynamicEqualsUnboundedWhenAllHigh) {
  std::vector<ScoredCandidate> s = {sc("T1003", 0.9), sc("T1110", 0.9), sc("T1021", 0.9)};
  EXPECT_EQ(apply_policy(s, KPolicy::dynamic(0.8)), apply_policy(s, KPolicy::fixed(1000)));
}

TEST(Sweep, MoreCandidatesNeverLowerRecall) {
  GoldMap gold = {{"a", ids({"T1003", "T1110"})}};
  std::vector<MappingResult> rs = {result("a", {sc("T1021", 0.9), sc("T1003", 0.8), sc("T1110", 0.7)})};
  auto pts = sweep_k(rs, gold, {KPolicy::fixed(1), KPolicy::fixed(3)}, MatchSemantics::strict);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_GE(pts[1].report.ar, pts[0].report.ar);
  EXPECT_EQ(pts[1].report.ar, 1.0);
}

TEST(Sweep, RandomMatchesOracle) {
  std::mt19937 rng(5);
  auto pool = testsupport::id_pool(rng, 12);
  GoldMap gold;
  std::vector<MappingResult> rs;
  for (int i = 0; i < 30; ++i) {
    const std::string id = "rule-" + std::to_string(i);
    std::set<TechniqueId> g;
    while (g.empty()) {
      for (const auto& x : pool) if (rng() % 4 == 0) g.insert(parse_technique_id(x));
    }
    gold[id] = g;
    std::vector<ScoredCandidate> s;
    std::uniform_real_distribution<double> u(0, 1);
    for (const auto& x : pool) if (rng() % 2 == 0) s.push_back(sc(x, std::round(u(rng) * 100) / 100));
    rs.push_back(result(id, s));
  }
  auto policies = default_sweep_policies();
  auto pts = sweep_k(rs, gold, policies, MatchSemantics::strict);
  ASSERT_EQ(pts.size(), 8u);
  for (const auto& pt : pts) {
    std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> raw;
    for (const auto& r : rs) {
      // independent cut: sort by (confidence desc, id asc) by hand
      auto s = r.scored;
      std::sort(s.begin(), s.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        return *a.confidence != *b.confidence ? *a.confidence > *b.confidence : a.id.str() < b.id.str();
      });
      std::vector<std::string> pred;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const bool keep = pt.policy.kind == KPolicy::Kind::fixed ? i < pt.policy.k
                                                                 : *s[i].confidence >= pt.policy.threshold;
        if (keep) pred.push_back(s[i].id.str());
      }
      std::vector<std::string> g;
      for (const auto& x : gold.at(r.rule_id)) g.push_back(x.str());
      raw.push_back({g, pred});
    }
    auto want = testsupport::oracle_metrics(raw);
    EXPECT_NEAR(pt.report.ar, want.ar, 1e-12) << pt.policy.label();
    EXPECT_NEAR(pt.report.ap, want.ap, 1e-12) << pt.policy.label();
    EXPECT_NEAR(pt.report.war, want.war, 1e-12) << pt.policy.label();
    EXPECT_NEAR(pt.report.wap, want.wap, 1e-12) << pt.policy.label();
  }
}

TEST(Sweep, MissingScores) {
  GoldMap gold = {{"a", ids({"T1003"})}};
  auto r = result("a", {});
  r.candidates.push_back({parse_technique_id("T1003"), "", ""});
  try {
    sweep_k({r}, gold, {KPolicy::fixed(1)}, MatchSemantics::strict);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingScores);
  }
}

TEST(Evaluate, SkipsFailuresAndUnlabeled) {
  GoldMap gold = {{"a", ids({"T1003"})}, {"b", ids({"T1110"})}};
  auto ok = result("a", {sc("T1003", 0.9)});
  ok.recommendations.push_back({parse_technique_id("T1003"), "r", 0.9});
  auto failed = result("b", {});
  failed.failure = StageFailure{"translate", Errc::StageFailed, "boom"};
  auto unlabeled = result("c", {});
  auto rep = evaluate_results({ok, failed, unlabeled}, gold, MatchSemantics::strict, std::nullopt);
  EXPECT_EQ(rep.samples.size(), 1u);
  ASSERT_EQ(rep.skipped.size(), 2u);
  EXPECT_NE(rep.skipped[0].reason.find("translate"), std::string::npos);
  EXPECT_THROW(evaluate_results({failed}, gold, MatchSemantics::strict, std::nullopt), Error);
}

TEST(Reports, TabularSweepAndRoundTrip) {
  GoldMap gold = {{"a", ids({"T1003", "T1110"})}, {"b", ids({"T1021"})}};
  std::vector<MappingResult> rs = {result("a", {sc("T1003", 0.9), sc("T1036", 0.85), sc("T1110", 0.4)}),
                                   result("b", {sc("T1021", 0.95)})};
  auto pts = sweep_k(rs, gold, {KPolicy::fixed(1), KPolicy::fixed(3), KPolicy::dynamic(0.8)},
                     MatchSemantics::strict);
  const std::string csv = emit_sweep(pts, ReportFormat::tabular);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,policy,ar,war,ap,wap,f1,samples,skipped");

  const std::string human = emit_sweep(pts, ReportFormat::human);
  const auto k = human.find("k"), ar = human.find("AR (WAR)"), ap = human.find("AP (WAP)"), f1 = human.find("F1");
  EXPECT_LT(k, ar);
  EXPECT_LT(ar, ap);
  EXPECT_LT(ap, f1);

  auto back = sweep_from_json(sweep_to_json(pts));
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(back[i].policy, pts[i].policy);
    EXPECT_EQ(back[i].report.ar, pts[i].report.ar);
    EXPECT_EQ(back[i].report.wap, pts[i].report.wap);
    EXPECT_EQ(back[i].report.f1, pts[i].report.f1);
  }
  auto rep = pts[0].report;
  auto rt = report_from_json(report_to_json(rep));
  EXPECT_EQ(report_to_json(rt), report_to_json(rep));
}

TEST(Manifest, HashIgnoresTimestamp) {
  ExperimentManifest m;
  m.command = "evaluate";
  m.params = {{"cutoff", "2024-11-01"}};
  m.created_at = "2026-01-01T00:00:00Z";
  auto other = m;
  other.created_at = "2026-02-02T00:00:00Z";
  EXPECT_EQ(manifest_hash(m), manifest_hash(other));
  other.params["cutoff"] = "2024-12-01";
  EXPECT_NE(manifest_hash(m), manifest_hash(other));
  auto j = manifest_to_json(m);
  EXPECT_EQ(j["manifest_hash"], manifest_hash(m));
  EXPECT_EQ(manifest_hash(manifest_from_json(j)), manifest_hash(m));
}
