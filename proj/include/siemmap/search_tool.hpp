#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "siemmap/transport.hpp"

namespace siemmap {

struct SearchHit {
  std::string title;
  std::string url;
  std::string snippet;
};

/// Web search used by the enrichment agent. At most five hits per call;
/// throws Error(ToolUnavailable) when the search cannot be performed.
class SearchTool {
 public:
  static constexpr std::size_t kMaxHits = 5;

  virtual ~SearchTool() = default;
  virtual std::vector<SearchHit> search(std::string_view query) = 0;
};

struct SearchFixture {
  std::string query;
  std::vector<SearchHit> results;
};

/// Answers each query with the fixture whose query shares the most tokens
/// with it (earliest fixture on ties); no shared token means no hits.
class FixtureSearchTool final : public SearchTool {
 public:
  explicit FixtureSearchTool(std::vector<SearchFixture> fixtures) : fixtures_(std::move(fixtures)) {}
  std::vector<SearchHit> search(std::string_view query) override;

 private:
  std::vector<SearchFixture> fixtures_;
};

struct LiveSearchConfig {
  /// JSON search endpoint in the SearXNG style: GET <url>?q=<query>&format=json
  /// returning {"results": [{"title", "url", "content"}]}.
  std::string endpoint = "http://127.0.0.1:8888/search";
};

class LiveSearchTool final : public SearchTool {
 public:
  LiveSearchTool(LiveSearchConfig config, std::shared_ptr<Transport> transport)
      : config_(std::move(config)), transport_(std::move(transport)) {}
  std::vector<SearchHit> search(std::string_view query) override;

 private:
  LiveSearchConfig config_;
  std::shared_ptr<Transport> transport_;
};

/// Tool that is never reachable; used when search is disabled.
class NullSearchTool final : public SearchTool {
 public:
  std::vector<SearchHit> search(std::string_view query) override;
};

}  // namespace siemmap
