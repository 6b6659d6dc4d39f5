#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "siemmap/attack_kb.hpp"
#include "siemmap/embedding.hpp"

namespace siemmap {

struct IndexDocument {
  std::string doc_id;
  std::string text;
};

struct IndexEntry {
  std::string doc_id;
  Embedding embedding;  // unit norm (or zero)
  std::string text;
};

struct RetrievalResult {
  std::string doc_id;
  double score = 0.0;  // cosine, in [-1, 1]
  std::string text;
};

/// Exhaustive cosine index. Immutable once built; concurrent retrieval is
/// safe.
class VectorIndex {
 public:
  /// Throws Error(EmptyInput) for no documents, Error(DuplicateDoc) on a
  /// repeated id, and re-throws embed errors with the doc id attached.
  static VectorIndex build(const std::vector<IndexDocument>& docs, const Embedder& backend,
                           std::string kb_version = {});

  /// Top min(k, size) entries by cosine, score descending then doc id
  /// ascending.
  std::vector<RetrievalResult> retrieve(std::string_view query, std::size_t k,
                                        const Embedder& backend) const;
  std::vector<RetrievalResult> retrieve(const Embedding& query, std::size_t k) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::string& backend_id() const noexcept { return backend_id_; }
  const std::string& kb_version() const noexcept { return kb_version_; }
  const std::vector<IndexEntry>& entries() const noexcept { return entries_; }

  /// Header (dim, backend id, KB version) followed by the entries.
  std::string save() const;
  /// Throws Error(IndexMismatch) if the file was built with another backend.
  static VectorIndex load(std::string_view text, const Embedder& backend);

 private:
  VectorIndex() = default;

  std::vector<IndexEntry> entries_;
  std::size_t dim_ = 0;
  std::string backend_id_;
  std::string kb_version_;
};

/// Indexes the KB's detection documents (deprecated ones excluded).
VectorIndex build_kb_index(const AttackKb& kb, const Embedder& backend,
                           bool include_related_names = true);

}  // namespace siemmap
