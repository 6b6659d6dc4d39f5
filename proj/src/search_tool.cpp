#include "siemmap/search_tool.hpp"

#include <cctype>
#include <set>

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

std::vector<SearchHit> FixtureSearchTool::search(std::string_view query) {
  const auto q = tokenize(query);
  const std::set<std::string> qset(q.begin(), q.end());
  const SearchFixture* best = nullptr;
  std::size_t best_overlap = 0;
  for (const auto& fx : fixtures_) {
    const auto toks = tokenize(fx.query);
    const std::set<std::string> fset(toks.begin(), toks.end());
    std::size_t overlap = 0;
    for (const auto& t : fset) overlap += qset.contains(t) ? 1 : 0;
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = &fx;
    }
  }
  if (!best) return {};
  std::vector<SearchHit> hits = best->results;
  if (hits.size() > kMaxHits) hits.resize(kMaxHits);
  return hits;
}

namespace {

std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xf]);
    }
  }
  return out;
}

}  // namespace

std::vector<SearchHit> LiveSearchTool::search(std::string_view query) {
  HttpRequest req;
  req.method = "GET";
  req.url = config_.endpoint + "?q=" + url_encode(query) + "&format=json";
  HttpResponse resp;
  try {
    resp = transport_->send(req);
  } catch (const Error& e) {
    throw Error(Errc::ToolUnavailable, std::string("web search failed: ") + e.what());
  }
  if (resp.status != 200) {
    throw Error(Errc::ToolUnavailable, "web search returned HTTP " + std::to_string(resp.status));
  }
  std::vector<SearchHit> hits;
  try {
    auto parsed = nlohmann::json::parse(resp.body);
    for (const auto& r : parsed.at("results")) {
      if (hits.size() == kMaxHits) break;
      hits.push_back({r.value("title", ""), r.value("url", ""), r.value("content", "")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ToolUnavailable, std::string("unreadable search response: ") + e.what());
  }
  return hits;
}

std::vector<SearchHit> NullSearchTool::search(std::string_view) {
  throw Error(Errc::ToolUnavailable, "web search is disabled");
}

}  // namespace siemmap
