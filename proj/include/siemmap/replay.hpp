#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "siemmap/embedding.hpp"
#include "siemmap/gateway.hpp"
#include "siemmap/search_tool.hpp"

namespace siemmap {

/// Append-only key -> JSON value log (one {"k","v"} object per line).
/// Later lines win; a torn final line is ignored.
class KeyValueLog {
 public:
  KeyValueLog() = default;
  explicit KeyValueLog(std::filesystem::path path);

  std::optional<nlohmann::json> find(const std::string& key) const;
  void put(const std::string& key, const nlohmann::json& value);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, nlohmann::json> entries_;
};

/// Puts web search behind the same record/replay switch as model calls.
/// In replay mode a miss is reported as Error(ToolUnavailable) and the inner
/// tool is never touched.
class CachingSearchTool final : public SearchTool {
 public:
  CachingSearchTool(std::shared_ptr<SearchTool> inner, std::shared_ptr<KeyValueLog> log, CacheMode mode)
      : inner_(std::move(inner)), log_(std::move(log)), mode_(mode) {}
  std::vector<SearchHit> search(std::string_view query) override;

 private:
  std::shared_ptr<SearchTool> inner_;
  std::shared_ptr<KeyValueLog> log_;
  CacheMode mode_;
};

/// Same for query embeddings. Keeps the inner embedder's id and dimension.
class CachingEmbedder final : public Embedder {
 public:
  CachingEmbedder(std::shared_ptr<const Embedder> inner, std::shared_ptr<KeyValueLog> log, CacheMode mode)
      : inner_(std::move(inner)), log_(std::move(log)), mode_(mode) {}
  std::string id() const override { return inner_->id(); }
  std::size_t dim() const override { return inner_->dim(); }

 protected:
  Embedding embed_nonempty(std::string_view text) const override;

 private:
  std::shared_ptr<const Embedder> inner_;
  std::shared_ptr<KeyValueLog> log_;
  CacheMode mode_;
};

}  // namespace siemmap
