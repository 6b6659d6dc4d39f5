#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "siemmap/technique_id.hpp"

namespace siemmap {

struct Technique {
  TechniqueId id;
  std::string name;
  std::string description;
  std::vector<std::string> tactics;  // sorted, unique
  bool revoked = false;
  bool deprecated = false;

  bool is_subtechnique() const noexcept { return id.is_subtechnique(); }
  /// Eligible for recommendation. Revoked and deprecated entries stay
  /// resolvable for gold-label lookup but are never proposed.
  bool active() const noexcept { return !revoked && !deprecated; }
};

enum class DocKind { data_component, mitigation, data_source };

std::string_view doc_kind_name(DocKind kind) noexcept;
DocKind parse_doc_kind(std::string_view name);

struct DetectionDoc {
  DocKind kind = DocKind::data_component;
  std::string id;  // ATT&CK external id when present (DC0064, M1042), else the STIX id
  std::string name;
  std::string description;
  std::vector<TechniqueId> related_techniques;  // sorted, unique
  bool deprecated = false;
};

struct IngestOptions {
  /// Also store data sources (parents of data components) as documents.
  bool include_data_sources = false;
};

/// Immutable view of the ATT&CK Enterprise matrix.
class AttackKb {
 public:
  /// Validates parent closure and referential integrity; throws
  /// Error(MalformedBundle) on violation.
  AttackKb(std::map<TechniqueId, Technique> techniques, std::vector<DetectionDoc> docs,
           std::string version);

  /// Throws Error(UnknownTechnique).
  const Technique& lookup(const TechniqueId& id) const;
  const Technique* find(const TechniqueId& id) const noexcept;
  bool contains(const TechniqueId& id) const noexcept { return find(id) != nullptr; }

  const DetectionDoc* find_doc(std::string_view doc_id) const noexcept;

  const std::map<TechniqueId, Technique>& techniques() const noexcept { return techniques_; }
  const std::vector<DetectionDoc>& docs() const noexcept { return docs_; }
  const std::string& version() const noexcept { return version_; }

  std::size_t active_count() const noexcept;

  /// Keyword search over names and descriptions of active techniques.
  /// Name hits weigh more than description hits; an id mentioned verbatim
  /// in the query ranks first. Ties resolve by id.
  std::vector<const Technique*> search(std::string_view query, std::size_t limit) const;

 private:
  std::map<TechniqueId, Technique> techniques_;
  std::vector<DetectionDoc> docs_;
  std::string version_;
};

/// Builds a KB from a STIX 2.1 bundle (the upstream enterprise-attack.json
/// layout). Handles both the legacy data-component "detects" relationships
/// and the detection-strategy/analytic indirection of newer releases.
AttackKb ingest_stix(std::string_view bundle_bytes, const IngestOptions& options = {});
AttackKb ingest_stix_file(const std::filesystem::path& path, const IngestOptions& options = {});

/// Text stored in the vector index for a document: name, description and,
/// optionally, the newline-joined names of related techniques.
std::string doc_embedding_text(const DetectionDoc& doc, const AttackKb& kb,
                               bool include_related_names = true);

/// Compact, versioned, content-hashed snapshot for fast reload.
std::string save_snapshot(const AttackKb& kb);
/// Throws Error(MalformedBundle) on format or hash mismatch.
AttackKb load_snapshot(std::string_view text);

}  // namespace siemmap
