#include "siemmap/attack_kb.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

using nlohmann::json;

std::string_view doc_kind_name(DocKind kind) noexcept {
  switch (kind) {
    case DocKind::data_component: return "data_component";
    case DocKind::mitigation: return "mitigation";
    case DocKind::data_source: return "data_source";
  }
  return "data_component";
}

DocKind parse_doc_kind(std::string_view name) {
  if (name == "data_component") return DocKind::data_component;
  if (name == "mitigation") return DocKind::mitigation;
  if (name == "data_source") return DocKind::data_source;
  throw Error(Errc::MalformedBundle, "unknown document kind '" + std::string(name) + "'");
}

AttackKb::AttackKb(std::map<TechniqueId, Technique> techniques, std::vector<DetectionDoc> docs,
                   std::string version)
    : techniques_(std::move(techniques)), docs_(std::move(docs)), version_(std::move(version)) {
  for (const auto& [id, t] : techniques_) {
    if (!(t.id == id)) throw Error(Errc::MalformedBundle, "technique keyed under wrong id " + id.str());
    if (id.is_subtechnique() && !techniques_.contains(id.parent())) {
      throw Error(Errc::MalformedBundle,
                  "sub-technique " + id.str() + " has no parent " + id.parent().str(), id.str());
    }
    if (t.active() && trim(t.description).empty()) {
      throw Error(Errc::MalformedBundle, "technique " + id.str() + " has no description", id.str());
    }
  }
  std::unordered_set<std::string> seen;
  for (const auto& doc : docs_) {
    if (!seen.insert(doc.id).second) {
      throw Error(Errc::MalformedBundle, "duplicate document id " + doc.id, doc.id);
    }
    for (const auto& rel : doc.related_techniques) {
      if (!techniques_.contains(rel)) {
        throw Error(Errc::MalformedBundle,
                    "document " + doc.id + " references unknown technique " + rel.str(), doc.id);
      }
    }
  }
}

const Technique* AttackKb::find(const TechniqueId& id) const noexcept {
  auto it = techniques_.find(id);
  return it == techniques_.end() ? nullptr : &it->second;
}

const Technique& AttackKb::lookup(const TechniqueId& id) const {
  if (const auto* t = find(id)) return *t;
  throw Error(Errc::UnknownTechnique, "unknown technique " + id.str(), id.str());
}

const DetectionDoc* AttackKb::find_doc(std::string_view doc_id) const noexcept {
  auto it = std::find_if(docs_.begin(), docs_.end(),
                         [&](const DetectionDoc& d) { return d.id == doc_id; });
  return it == docs_.end() ? nullptr : &*it;
}

std::size_t AttackKb::active_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      techniques_.begin(), techniques_.end(), [](const auto& kv) { return kv.second.active(); }));
}

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and", "are", "as",   "at",   "be",   "by",   "for",  "from",
      "has",  "in",   "is",  "it",  "its",  "of",   "on",   "or",   "that", "the",
      "this", "to",   "was", "with", "which", "may", "can", "use", "used", "using"};
  return words;
}

}  // namespace

std::vector<const Technique*> AttackKb::search(std::string_view query, std::size_t limit) const {
  std::set<std::string> terms;
  for (auto& tok : tokenize(query)) {
    if (tok.size() > 1 && !stopwords().contains(tok)) terms.insert(std::move(tok));
  }
  std::set<TechniqueId> mentioned;
  for (const auto& tok : tokenize(query)) {
    // tokenize splits "t1087.002" into "t1087" and "002"; only bases are matched here
    if (auto id = TechniqueId::try_parse(tok)) mentioned.insert(*id);
  }

  std::vector<std::pair<double, const Technique*>> scored;
  for (const auto& [id, t] : techniques_) {
    if (!t.active()) continue;
    double score = 0.0;
    if (mentioned.contains(id)) score += 100.0;
    if (!terms.empty()) {
      auto name_toks = tokenize(t.name);
      std::set<std::string> name_set(name_toks.begin(), name_toks.end());
      auto desc_toks = tokenize(t.description);
      std::set<std::string> desc_set(desc_toks.begin(), desc_toks.end());
      for (const auto& term : terms) {
        if (name_set.contains(term)) score += 3.0;
        if (desc_set.contains(term)) score += 1.0;
      }
    }
    if (score > 0.0) scored.emplace_back(score, &t);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<const Technique*> out;
  for (std::size_t i = 0; i < scored.size() && i < limit; ++i) out.push_back(scored[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// STIX ingestion

namespace {

std::string external_attack_id(const json& obj) {
  auto refs = obj.find("external_references");
  if (refs == obj.end() || !refs->is_array()) return {};
  for (const auto& ref : *refs) {
    if (ref.value("source_name", "") == "mitre-attack" && ref.contains("external_id") &&
        ref["external_id"].is_string()) {
      return ref["external_id"].get<std::string>();
    }
  }
  return {};
}

bool flag(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it != obj.end() && it->is_boolean() && it->get<bool>();
}

std::string str_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  return (it != obj.end() && it->is_string()) ? it->get<std::string>() : std::string{};
}

struct DocBuilder {
  DetectionDoc doc;
  std::set<TechniqueId> related;
};

}  // namespace

AttackKb ingest_stix(std::string_view bundle_bytes, const IngestOptions& options) {
  json bundle;
  try {
    bundle = json::parse(bundle_bytes);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedBundle, std::string("bundle is not valid JSON: ") + e.what());
  }
  if (!bundle.is_object() || bundle.value("type", "") != "bundle" || !bundle.contains("objects") ||
      !bundle["objects"].is_array()) {
    throw Error(Errc::MalformedBundle, "not a STIX bundle (missing type=bundle or objects[])");
  }

  std::map<TechniqueId, Technique> techniques;
  std::unordered_map<std::string, TechniqueId> pattern_ids;  // STIX id -> technique id
  std::map<std::string, DocBuilder> components;              // STIX id -> doc
  std::map<std::string, DocBuilder> mitigations;
  std::map<std::string, DocBuilder> sources;
  std::unordered_map<std::string, std::string> component_source;  // component -> data source
  std::unordered_map<std::string, std::vector<std::string>> strategy_analytics;
  std::unordered_map<std::string, std::vector<std::string>> analytic_components;
  std::vector<const json*> relationships;
  std::string version;

  for (const auto& obj : bundle["objects"]) {
    if (!obj.is_object()) throw Error(Errc::MalformedBundle, "non-object entry in objects[]");
    const std::string type = str_field(obj, "type");
    const std::string stix_id = str_field(obj, "id");
    if (type.empty() || stix_id.empty()) {
      throw Error(Errc::MalformedBundle, "object without type or id");
    }
    const bool retired = flag(obj, "revoked") || flag(obj, "x_mitre_deprecated");

    if (type == "attack-pattern") {
      std::string ext = external_attack_id(obj);
      if (ext.empty()) {
        throw Error(Errc::MissingExternalId, "attack-pattern " + stix_id + " has no ATT&CK id",
                    stix_id);
      }
      auto id = TechniqueId::try_parse(ext);
      if (!id) throw Error(Errc::MalformedBundle, "attack-pattern id '" + ext + "' is not a technique id", ext);
      Technique t{*id, str_field(obj, "name"), str_field(obj, "description"), {},
                  flag(obj, "revoked"), flag(obj, "x_mitre_deprecated")};
      std::set<std::string> tactics;
      if (auto kc = obj.find("kill_chain_phases"); kc != obj.end() && kc->is_array()) {
        for (const auto& phase : *kc) {
          if (phase.value("kill_chain_name", "") == "mitre-attack") {
            tactics.insert(phase.value("phase_name", ""));
          }
        }
      }
      t.tactics.assign(tactics.begin(), tactics.end());
      pattern_ids.emplace(stix_id, *id);
      auto [it, inserted] = techniques.try_emplace(*id, t);
      if (!inserted) {
        // A retired object may share its id with the live one that replaced it.
        if (it->second.active() && t.active()) {
          throw Error(Errc::MalformedBundle, "duplicate technique id " + id->str(), id->str());
        }
        if (t.active()) it->second = t;
      }
    } else if (type == "x-mitre-data-component") {
      std::string ext = external_attack_id(obj);
      DocBuilder b;
      b.doc = {DocKind::data_component, ext.empty() ? stix_id : ext, str_field(obj, "name"),
               str_field(obj, "description"), {}, retired};
      components.emplace(stix_id, std::move(b));
      if (auto src = str_field(obj, "x_mitre_data_source_ref"); !src.empty()) {
        component_source.emplace(stix_id, src);
      }
    } else if (type == "x-mitre-data-source") {
      std::string ext = external_attack_id(obj);
      DocBuilder b;
      b.doc = {DocKind::data_source, ext.empty() ? stix_id : ext, str_field(obj, "name"),
               str_field(obj, "description"), {}, retired};
      sources.emplace(stix_id, std::move(b));
    } else if (type == "course-of-action") {
      std::string ext = external_attack_id(obj);
      DocBuilder b;
      b.doc = {DocKind::mitigation, ext.empty() ? stix_id : ext, str_field(obj, "name"),
               str_field(obj, "description"), {}, retired};
      mitigations.emplace(stix_id, std::move(b));
    } else if (type == "x-mitre-detection-strategy") {
      auto& refs = strategy_analytics[stix_id];
      if (auto it = obj.find("x_mitre_analytic_refs"); it != obj.end() && it->is_array()) {
        for (const auto& r : *it) {
          if (r.is_string()) refs.push_back(r.get<std::string>());
        }
      }
    } else if (type == "x-mitre-analytic") {
      auto& comps = analytic_components[stix_id];
      if (auto it = obj.find("x_mitre_log_source_references"); it != obj.end() && it->is_array()) {
        for (const auto& r : *it) {
          if (r.is_object()) {
            if (auto c = str_field(r, "x_mitre_data_component_ref"); !c.empty()) comps.push_back(c);
          }
        }
      }
    } else if (type == "relationship") {
      if (!retired) relationships.push_back(&obj);
    } else if (type == "x-mitre-collection") {
      auto name = str_field(obj, "name");
      auto ver = str_field(obj, "x_mitre_version");
      if (!ver.empty()) version = (name.empty() ? std::string("ATT&CK") : name) + " v" + ver;
    }
  }

  for (const json* rel_ptr : relationships) {
    const json& rel = *rel_ptr;
    const std::string rtype = str_field(rel, "relationship_type");
    const std::string src = str_field(rel, "source_ref");
    const std::string dst = str_field(rel, "target_ref");
    auto target = pattern_ids.find(dst);
    if (target == pattern_ids.end()) continue;
    if (rtype == "detects") {
      if (auto c = components.find(src); c != components.end()) {
        c->second.related.insert(target->second);
      } else if (auto s = strategy_analytics.find(src); s != strategy_analytics.end()) {
        for (const auto& analytic : s->second) {
          auto a = analytic_components.find(analytic);
          if (a == analytic_components.end()) continue;
          for (const auto& comp : a->second) {
            if (auto c2 = components.find(comp); c2 != components.end()) {
              c2->second.related.insert(target->second);
            }
          }
        }
      }
    } else if (rtype == "mitigates") {
      if (auto m = mitigations.find(src); m != mitigations.end()) {
        m->second.related.insert(target->second);
      }
    }
  }

  std::vector<DetectionDoc> docs;
  auto emit = [&](std::map<std::string, DocBuilder>& builders) {
    for (auto& [stix_id, b] : builders) {
      b.doc.related_techniques.assign(b.related.begin(), b.related.end());
      docs.push_back(std::move(b.doc));
    }
  };
  if (options.include_data_sources) {
    for (const auto& [comp, src] : component_source) {
      auto s = sources.find(src);
      auto c = components.find(comp);
      if (s != sources.end() && c != components.end()) {
        s->second.related.insert(c->second.related.begin(), c->second.related.end());
      }
    }
    emit(sources);
  }
  emit(components);
  emit(mitigations);
  std::sort(docs.begin(), docs.end(), [](const DetectionDoc& a, const DetectionDoc& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.id < b.id;
  });

  if (version.empty()) version = "sha256:" + sha256_hex(bundle_bytes).substr(0, 16);
  return AttackKb(std::move(techniques), std::move(docs), std::move(version));
}

AttackKb ingest_stix_file(const std::filesystem::path& path, const IngestOptions& options) {
  return ingest_stix(read_file(path), options);
}

std::string doc_embedding_text(const DetectionDoc& doc, const AttackKb& kb,
                               bool include_related_names) {
  std::string text = doc.name + "\n" + doc.description;
  if (include_related_names) {
    for (const auto& id : doc.related_techniques) {
      if (const auto* t = kb.find(id)) text += "\n" + t->name;
    }
  }
  return text;
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

constexpr int kSnapshotFormatVersion = 1;

json snapshot_body(const AttackKb& kb) {
  json techniques = json::array();
  for (const auto& [id, t] : kb.techniques()) {
    techniques.push_back({{"id", id.str()},
                          {"name", t.name},
                          {"description", t.description},
                          {"tactics", t.tactics},
                          {"revoked", t.revoked},
                          {"deprecated", t.deprecated}});
  }
  json docs = json::array();
  for (const auto& d : kb.docs()) {
    json related = json::array();
    for (const auto& id : d.related_techniques) related.push_back(id.str());
    docs.push_back({{"kind", doc_kind_name(d.kind)},
                    {"id", d.id},
                    {"name", d.name},
                    {"description", d.description},
                    {"related", related},
                    {"deprecated", d.deprecated}});
  }
  return {{"format", "siemmap-kb"},
          {"format_version", kSnapshotFormatVersion},
          {"version", kb.version()},
          {"techniques", techniques},
          {"docs", docs}};
}

}  // namespace

std::string save_snapshot(const AttackKb& kb) {
  json body = snapshot_body(kb);
  body["content_hash"] = sha256_hex(body.dump());
  return body.dump() + "\n";
}

AttackKb load_snapshot(std::string_view text) {
  json body;
  try {
    body = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedBundle, std::string("snapshot is not valid JSON: ") + e.what());
  }
  if (!body.is_object() || body.value("format", "") != "siemmap-kb") {
    throw Error(Errc::MalformedBundle, "not a KB snapshot");
  }
  if (body.value("format_version", 0) != kSnapshotFormatVersion) {
    throw Error(Errc::MalformedBundle, "unsupported snapshot format version");
  }
  const std::string stored_hash = body.value("content_hash", "");
  body.erase("content_hash");
  if (sha256_hex(body.dump()) != stored_hash) {
    throw Error(Errc::MalformedBundle, "snapshot content hash mismatch");
  }
  try {
    std::map<TechniqueId, Technique> techniques;
    for (const auto& t : body.at("techniques")) {
      auto id = TechniqueId::parse(t.at("id").get<std::string>());
      techniques.emplace(id, Technique{id, t.at("name"), t.at("description"),
                                       t.at("tactics").get<std::vector<std::string>>(),
                                       t.at("revoked"), t.at("deprecated")});
    }
    std::vector<DetectionDoc> docs;
    for (const auto& d : body.at("docs")) {
      DetectionDoc doc{parse_doc_kind(d.at("kind").get<std::string>()), d.at("id"), d.at("name"),
                       d.at("description"), {}, d.at("deprecated")};
      for (const auto& r : d.at("related")) {
        doc.related_techniques.push_back(TechniqueId::parse(r.get<std::string>()));
      }
      docs.push_back(std::move(doc));
    }
    return AttackKb(std::move(techniques), std::move(docs), body.at("version"));
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedBundle, std::string("snapshot has wrong shape: ") + e.what());
  }
}

}  // namespace siemmap
