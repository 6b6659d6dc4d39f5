#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "siemmap/gateway.hpp"
#include "siemmap/search_tool.hpp"

namespace siemmap {

/// Offline fixture bundle (JSON):
///
///   {
///     "format": "siemmap-fixtures",
///     "replies": { "<stage>": [ {"when": ["substring", ...], "reply": "..."} ] },
///     "search":  [ {"query": "...", "results": [ {"title", "url", "snippet"} ] } ]
///   }
///
/// `reply` may also be a JSON object or array; it is stored as its compact
/// serialization.
struct FixtureBundle {
  std::map<Stage, std::vector<FixtureReply>> replies;
  std::vector<SearchFixture> search;
  std::string content_hash;  // SHA-256 of the source bytes
};

/// Throws Error(ConfigError) on an invalid bundle.
FixtureBundle parse_fixture_bundle(std::string_view text);
FixtureBundle load_fixture_bundle(const std::filesystem::path& path);

/// Mock backend whose id embeds a prefix of the bundle hash, so recorded
/// caches are tied to the fixtures that produced them.
std::shared_ptr<MockBackend> make_mock_backend(const FixtureBundle& bundle);

}  // namespace siemmap
