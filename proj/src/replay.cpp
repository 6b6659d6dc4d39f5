#include "siemmap/replay.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

using nlohmann::json;

KeyValueLog::KeyValueLog(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::istringstream in(read_file(path_));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      entries_[j.at("k").get<std::string>()] = j.at("v");
    } catch (const json::exception&) {
      if (in.peek() == EOF) break;  // torn tail
      throw Error(Errc::IoError, "corrupt line in " + path_.string(), path_.string());
    }
  }
}

std::optional<json> KeyValueLog::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return std::optional<json>(std::in_place, it->second);
}

void KeyValueLog::put(const std::string& key, const json& value) {
  std::lock_guard lock(mu_);
  if (!path_.empty()) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    out << json{{"k", key}, {"v", value}}.dump() << '\n';
    if (!out) throw Error(Errc::IoError, "cannot append to " + path_.string(), path_.string());
  }
  entries_[key] = value;
}

std::size_t KeyValueLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<SearchHit> CachingSearchTool::search(std::string_view query) {
  const std::string key = sha256_hex(std::string("search") + '\0' + std::string(query));
  const bool reads = mode_ == CacheMode::replay || mode_ == CacheMode::read_through;
  if (reads) {
    if (auto hit = log_->find(key)) {
      std::vector<SearchHit> out;
      for (const auto& h : *hit) {
        out.push_back({h.at("title").get<std::string>(), h.at("url").get<std::string>(),
                       h.at("snippet").get<std::string>()});
      }
      return out;
    }
    if (mode_ == CacheMode::replay) {
      throw Error(Errc::ToolUnavailable, "search replay miss for '" + std::string(query) + "'", key);
    }
  }
  if (!inner_) throw Error(Errc::ToolUnavailable, "no search tool configured");
  auto hits = inner_->search(query);
  if (mode_ != CacheMode::off) {
    json arr = json::array();
    for (const auto& h : hits) arr.push_back({{"title", h.title}, {"url", h.url}, {"snippet", h.snippet}});
    log_->put(key, arr);
  }
  return hits;
}

Embedding CachingEmbedder::embed_nonempty(std::string_view text) const {
  const std::string key = sha256_hex(inner_->id() + '\0' + std::string(text));
  const bool reads = mode_ == CacheMode::replay || mode_ == CacheMode::read_through;
  if (reads) {
    if (auto hit = log_->find(key)) return {hit->get<std::vector<double>>()};
    if (mode_ == CacheMode::replay) {
      throw Error(Errc::CacheMiss, "embedding replay miss (key " + key + ")", key);
    }
  }
  Embedding e = embed(text, *inner_);
  if (mode_ != CacheMode::off) log_->put(key, e.values);
  return e;
}

}  // namespace siemmap
