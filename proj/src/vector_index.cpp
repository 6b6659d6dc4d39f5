#include "siemmap/vector_index.hpp"

#include <algorithm>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"

namespace siemmap {

namespace {

void normalize(Embedding& e) {
  const double n = l2_norm(e.values);
  if (n == 0.0) return;
  for (double& v : e.values) v /= n;
}

}  // namespace

VectorIndex VectorIndex::build(const std::vector<IndexDocument>& docs, const Embedder& backend,
                               std::string kb_version) {
  if (docs.empty()) throw Error(Errc::EmptyInput, "cannot build an index over zero documents");
  VectorIndex index;
  index.dim_ = backend.dim();
  index.backend_id_ = backend.id();
  index.kb_version_ = std::move(kb_version);
  std::unordered_set<std::string> seen;
  index.entries_.reserve(docs.size());
  for (const auto& doc : docs) {
    if (!seen.insert(doc.doc_id).second) {
      throw Error(Errc::DuplicateDoc, "duplicate document id " + doc.doc_id, doc.doc_id);
    }
    Embedding e;
    try {
      e = embed(doc.text, backend);
    } catch (const Error& err) {
      throw Error(err.code(), "document " + doc.doc_id + ": " + err.what(), doc.doc_id);
    }
    normalize(e);
    index.entries_.push_back({doc.doc_id, std::move(e), doc.text});
  }
  return index;
}

std::vector<RetrievalResult> VectorIndex::retrieve(std::string_view query, std::size_t k,
                                                   const Embedder& backend) const {
  if (backend.id() != backend_id_) {
    throw Error(Errc::IndexMismatch,
                "index built with " + backend_id_ + ", queried with " + backend.id());
  }
  return retrieve(embed(query, backend), k);
}

std::vector<RetrievalResult> VectorIndex::retrieve(const Embedding& query, std::size_t k) const {
  if (k == 0) throw Error(Errc::ConfigError, "retrieval k must be positive");
  if (query.dim() != dim_) {
    throw Error(Errc::IndexMismatch, "query dim " + std::to_string(query.dim()) +
                                         " != index dim " + std::to_string(dim_));
  }
  Embedding q = query;
  normalize(q);

  std::vector<RetrievalResult> all;
  all.reserve(entries_.size());
  for (const auto& entry : entries_) {
    const double s = std::clamp(dot(q.values, entry.embedding.values), -1.0, 1.0);
    all.push_back({entry.doc_id, s, entry.text});
  }
  const std::size_t n = std::min(k, all.size());
  auto by_rank = [](const RetrievalResult& a, const RetrievalResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), by_rank);
  all.resize(n);
  return all;
}

std::string VectorIndex::save() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"doc_id", e.doc_id}, {"text", e.text}, {"embedding", e.embedding.values}});
  }
  nlohmann::json out = {{"format", "siemmap-index"},
                        {"dim", dim_},
                        {"backend_id", backend_id_},
                        {"kb_version", kb_version_},
                        {"entries", entries}};
  return out.dump() + "\n";
}

VectorIndex VectorIndex::load(std::string_view text, const Embedder& backend) {
  nlohmann::json in;
  try {
    in = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::IndexMismatch, std::string("index file is not valid JSON: ") + e.what());
  }
  if (!in.is_object() || in.value("format", "") != "siemmap-index") {
    throw Error(Errc::IndexMismatch, "not an index file");
  }
  const std::string stored = in.value("backend_id", "");
  if (stored != backend.id()) {
    throw Error(Errc::IndexMismatch, "index built with " + stored + ", loading with " + backend.id(),
                stored);
  }
  VectorIndex index;
  try {
    index.dim_ = in.at("dim").get<std::size_t>();
    index.backend_id_ = stored;
    index.kb_version_ = in.at("kb_version").get<std::string>();
    for (const auto& e : in.at("entries")) {
      IndexEntry entry{e.at("doc_id"), Embedding{e.at("embedding").get<std::vector<double>>()},
                       e.at("text")};
      if (entry.embedding.dim() != index.dim_) {
        throw Error(Errc::IndexMismatch, "entry " + entry.doc_id + " has wrong dimension");
      }
      index.entries_.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IndexMismatch, std::string("index file has wrong shape: ") + e.what());
  }
  if (index.dim_ != backend.dim()) {
    throw Error(Errc::IndexMismatch, "index dim differs from backend dim");
  }
  return index;
}

VectorIndex build_kb_index(const AttackKb& kb, const Embedder& backend, bool include_related_names) {
  std::vector<IndexDocument> docs;
  for (const auto& d : kb.docs()) {
    if (d.deprecated) continue;
    docs.push_back({d.id, doc_embedding_text(d, kb, include_related_names)});
  }
  return VectorIndex::build(docs, backend, kb.version());
}

}  // namespace siemmap
