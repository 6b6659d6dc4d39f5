#include <gtest/gtest.h>

#include "siemmap/attack_kb.hpp"
#include "siemmap/error.hpp"
#include "siemmap/util.hpp"
#include "support.hpp"

using namespace siemmap;
using nlohmann::json;

namespace {

json ext(const std::string& id) {
  return json::array({{{"source_name", "mitre-attack"}, {"external_id", id}}});
}

json technique(const std::string& stix, const std::string& id, const std::string& name) {
  return {{"type", "attack-pattern"}, {"id", stix}, {"name", name},
          {"description", name + " description"}, {"external_references", ext(id)},
          {"kill_chain_phases", json::array({{{"kill_chain_name", "mitre-attack"}, {"phase_name", "discovery"}}})}};
}

json minimal_bundle() {
  return {{"type", "bundle"},
          {"objects",
           json::array({technique("attack-pattern--1", "T1482", "Domain Trust Discovery"),
                        {{"type", "x-mitre-data-component"}, {"id", "x-mitre-data-component--1"},
                         {"name", "Command Execution"}, {"description", "cmd lines"},
                         {"external_references", ext("DC0064")}},
                        {{"type", "relationship"}, {"id", "relationship--1"},
                         {"relationship_type", "detects"},
                         {"source_ref", "x-mitre-data-component--1"},
                         {"target_ref", "attack-pattern--1"}}})}};
}

const AttackKb& excerpt() {
  static const AttackKb kb = ingest_stix_file(testsupport::fixture("attack-excerpt.json"));
  return kb;
}

}  // namespace

TEST(Ingest, MinimalBundle) {
  auto kb = ingest_stix(minimal_bundle().dump());
  ASSERT_EQ(kb.docs().size(), 1u);
  EXPECT_EQ(kb.docs()[0].id, "DC0064");
  EXPECT_EQ(kb.docs()[0].related_techniques, std::vector<TechniqueId>{parse_technique_id("T1482")});
  EXPECT_EQ(kb.lookup(parse_technique_id("T1482")).tactics, std::vector<std::string>{"discovery"});
}

TEST(Ingest, OrphanSubtechnique) {
  auto b = minimal_bundle();
  b["objects"].push_back(technique("attack-pattern--2", "T1087.002", "Domain Account"));
  try {
    ingest_stix(b.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MalformedBundle);
  }
}

TEST(Ingest, MissingExternalId) {
  auto b = minimal_bundle();
  auto t = technique("attack-pattern--3", "T1003", "x");
  t["external_references"] = json::array();
  b["objects"].push_back(t);
  try {
    ingest_stix(b.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingExternalId);
  }
}

TEST(Ingest, NotABundle) {
  EXPECT_THROW(ingest_stix("{\"type\":\"indicator\"}"), Error);
  EXPECT_THROW(ingest_stix("not json"), Error);
}

TEST(Ingest, DetectionStrategyIndirection) {
  auto b = minimal_bundle();
  auto& objs = b["objects"];
  objs.push_back(technique("attack-pattern--4", "T1649", "Steal or Forge Authentication Certificates"));
  objs.push_back({{"type", "x-mitre-analytic"}, {"id", "x-mitre-analytic--1"},
                  {"x_mitre_log_source_references",
                   json::array({{{"x_mitre_data_component_ref", "x-mitre-data-component--1"}}})}});
  objs.push_back({{"type", "x-mitre-detection-strategy"}, {"id", "x-mitre-detection-strategy--1"},
                  {"x_mitre_analytic_refs", json::array({"x-mitre-analytic--1"})}});
  objs.push_back({{"type", "relationship"}, {"id", "relationship--2"}, {"relationship_type", "detects"},
                  {"source_ref", "x-mitre-detection-strategy--1"}, {"target_ref", "attack-pattern--4"}});
  auto kb = ingest_stix(b.dump());
  EXPECT_EQ(kb.docs()[0].related_techniques,
            (std::vector<TechniqueId>{parse_technique_id("T1482"), parse_technique_id("T1649")}));
}

TEST(Ingest, Deterministic) {
  const std::string bytes = read_file(testsupport::fixture("attack-excerpt.json"));
  EXPECT_EQ(save_snapshot(ingest_stix(bytes)), save_snapshot(ingest_stix(bytes)));
}

TEST(Kb, Lookup) {
  const auto& kb = excerpt();
  EXPECT_EQ(kb.lookup(parse_technique_id("T1482")).name, "Domain Trust Discovery");
  EXPECT_EQ(kb.lookup(parse_technique_id("T1078")).name, "Valid Accounts");
  try {
    kb.lookup(parse_technique_id("T9999"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownTechnique);
  }
}

TEST(Kb, RetiredEntriesStayResolvable) {
  const auto& kb = excerpt();
  const auto* revoked = kb.find(parse_technique_id("T1086"));
  ASSERT_NE(revoked, nullptr);
  EXPECT_FALSE(revoked->active());
  EXPECT_EQ(kb.active_count(), 45u);
  for (const auto* t : kb.search("PowerShell scripting", 20)) EXPECT_TRUE(t->active());
}

TEST(Kb, ExcerptClosureAndIntegrity) {
  const auto& kb = excerpt();
  for (const auto& [id, t] : kb.techniques()) {
    if (id.is_subtechnique()) {
      EXPECT_TRUE(kb.contains(id.parent())) << id.str();
    }
  }
  for (const auto& doc : kb.docs()) {
    for (const auto& rel : doc.related_techniques) EXPECT_TRUE(kb.contains(rel)) << doc.id;
  }
  // data sources are opt-in
  for (const auto& doc : kb.docs()) EXPECT_NE(doc.kind, DocKind::data_source);
  auto with_sources = ingest_stix_file(testsupport::fixture("attack-excerpt.json"), {true});
  EXPECT_GT(with_sources.docs().size(), kb.docs().size());
}

TEST(Kb, SearchPrefersVerbatimIdThenName) {
  const auto& kb = excerpt();
  auto hits = kb.search("T1482 trust", 5);
  ASSERT_FALSE(hits.empty());
  EXPECT_EQ(hits[0]->id.str(), "T1482");
  auto by_name = kb.search("valid accounts", 3);
  ASSERT_FALSE(by_name.empty());
  EXPECT_EQ(by_name[0]->id.str(), "T1078");
}

TEST(Kb, SnapshotRoundTrip) {
  const auto& kb = excerpt();
  const std::string snap = save_snapshot(kb);
  auto back = load_snapshot(snap);
  EXPECT_EQ(back.version(), kb.version());
  EXPECT_EQ(save_snapshot(back), snap);
  std::string tampered = snap;
  tampered.replace(tampered.find("Domain Trust Discovery"), 6, "Dumain");
  EXPECT_THROW(load_snapshot(tampered), Error);
}
