#include "siemmap/fixtures.hpp"

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

FixtureBundle parse_fixture_bundle(std::string_view text) {
  nlohmann::json in;
  try {
    in = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ConfigError, std::string("fixture bundle is not valid JSON: ") + e.what());
  }
  if (!in.is_object() || in.value("format", "") != "siemmap-fixtures") {
    throw Error(Errc::ConfigError, "not a fixture bundle (format != siemmap-fixtures)");
  }
  FixtureBundle bundle;
  bundle.content_hash = sha256_hex(text);
  try {
    if (auto r = in.find("replies"); r != in.end()) {
      for (const auto& [stage, entries] : r->items()) {
        auto& table = bundle.replies[parse_stage(stage)];
        for (const auto& e : entries) {
          FixtureReply fx;
          if (auto w = e.find("when"); w != e.end()) fx.when = w->get<std::vector<std::string>>();
          const auto& reply = e.at("reply");
          fx.reply = reply.is_string() ? reply.get<std::string>() : reply.dump();
          table.push_back(std::move(fx));
        }
      }
    }
    if (auto s = in.find("search"); s != in.end()) {
      for (const auto& e : *s) {
        SearchFixture fx{e.at("query").get<std::string>(), {}};
        for (const auto& h : e.at("results")) {
          fx.results.push_back({h.value("title", ""), h.value("url", ""), h.value("snippet", "")});
        }
        bundle.search.push_back(std::move(fx));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("fixture bundle has wrong shape: ") + e.what());
  }
  return bundle;
}

FixtureBundle load_fixture_bundle(const std::filesystem::path& path) {
  return parse_fixture_bundle(read_file(path));
}

std::shared_ptr<MockBackend> make_mock_backend(const FixtureBundle& bundle) {
  return std::make_shared<MockBackend>(bundle.replies, bundle.content_hash.substr(0, 12));
}

}  // namespace siemmap
