#include "siemmap/config.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>

#include "siemmap/attack_kb.hpp"
#include "siemmap/error.hpp"
#include "siemmap/fixtures.hpp"
#include "siemmap/replay.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::ConfigError, "config key '" + key + "' has the wrong type", key);
  }
}

std::string str_field(const json& j, const std::string& key) { return field<std::string>(j, key); }

}  // namespace

void apply_config_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "backend") cfg.backend = str_field(v, key);
    else if (key == "model") cfg.model = str_field(v, key);
    else if (key == "base_url") cfg.base_url = str_field(v, key);
    else if (key == "api_key_env") cfg.api_key_env = str_field(v, key);
    else if (key == "embedder") cfg.embedder = str_field(v, key);
    else if (key == "embedding_model") cfg.embedding_model = str_field(v, key);
    else if (key == "search") cfg.search = str_field(v, key);
    else if (key == "search_endpoint") cfg.search_endpoint = str_field(v, key);
    else if (key == "kb") cfg.kb_path = str_field(v, key);
    else if (key == "index") cfg.index_path = str_field(v, key);
    else if (key == "corpus") cfg.corpus_root = str_field(v, key);
    else if (key == "fixtures") cfg.fixtures = str_field(v, key);
    else if (key == "cache_dir") cfg.cache_dir = str_field(v, key);
    else if (key == "cutoff") {
      const auto s = str_field(v, key);
      auto d = parse_date(s);
      if (!d) throw Error(Errc::ConfigError, "bad cutoff date '" + s + "'", key);
      cfg.cutoff = *d;
    } else if (key == "domain") {
      cfg.domain = parse_domain(str_field(v, key));
    } else if (key == "mode") cfg.mode = parse_mode(str_field(v, key));
    else if (key == "k") {
      cfg.k_policy = v.is_number_unsigned() ? KPolicy::fixed(v.get<std::size_t>())
                                            : parse_k_policy(str_field(v, key));
    } else if (key == "threshold") cfg.k_policy = KPolicy::dynamic(field<double>(v, key));
    else if (key == "recommend_k") cfg.recommend_k = field<std::size_t>(v, key);
    else if (key == "retrieval_k") cfg.retrieval_k = field<std::size_t>(v, key);
    else if (key == "semantics") cfg.semantics = parse_semantics(str_field(v, key));
    else if (key == "confidence") cfg.confidence = parse_confidence_method(str_field(v, key));
    else if (key == "max_search_iterations") cfg.max_search_iterations = field<unsigned>(v, key);
    else if (key == "concurrency") cfg.concurrency = field<unsigned>(v, key);
    else if (key == "cache_mode") cfg.cache_mode = parse_cache_mode(str_field(v, key));
    else if (key == "format") cfg.format = parse_format(str_field(v, key));
    else if (key == "temperature") cfg.temperature = field<double>(v, key);
    else if (key == "max_calls") cfg.max_calls = field<std::uint64_t>(v, key);
    else if (key == "max_tokens") cfg.max_tokens = field<std::uint64_t>(v, key);
    else throw Error(Errc::ConfigError, "unknown config key '" + key + "'", key);
  }
  if (cfg.retrieval_k == 0 || cfg.recommend_k == 0 || cfg.concurrency == 0) {
    throw Error(Errc::ConfigError, "retrieval_k, recommend_k and concurrency must be positive");
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::ConfigError, "config file not found: " + path.string(), path.string());
  }
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what(), path.string());
  }
  apply_config_json(cfg, j);
}

json config_to_json(const RunConfig& c) {
  json j = {{"backend", c.backend},
            {"model", c.model},
            {"base_url", c.base_url},
            {"api_key_env", c.api_key_env},
            {"embedder", c.embedder},
            {"embedding_model", c.embedding_model},
            {"search", c.search},
            {"search_endpoint", c.search_endpoint},
            {"kb", c.kb_path.string()},
            {"index", c.index_path.string()},
            {"corpus", c.corpus_root.string()},
            {"fixtures", c.fixtures.string()},
            {"cache_dir", c.cache_dir.string()},
            {"cutoff", format_date(c.cutoff)},
            {"mode", mode_name(c.mode)},
            {"k", format_k_policy(c.k_policy)},
            {"recommend_k", c.recommend_k},
            {"retrieval_k", c.retrieval_k},
            {"semantics", semantics_name(c.semantics)},
            {"confidence", confidence_method_name(c.confidence)},
            {"max_search_iterations", c.max_search_iterations},
            {"concurrency", c.concurrency},
            {"cache_mode", cache_mode_name(c.cache_mode)},
            {"format", format_name(c.format)},
            {"temperature", c.temperature},
            {"max_calls", c.max_calls},
            {"max_tokens", c.max_tokens}};
  if (c.domain) j["domain"] = domain_name(*c.domain);
  return j;
}

PipelineConfig pipeline_config(const RunConfig& cfg) {
  PipelineConfig p;
  p.mode = cfg.mode;
  p.recommend_k = cfg.recommend_k;
  p.retrieval_k = cfg.retrieval_k;
  p.max_search_iterations = cfg.max_search_iterations;
  p.confidence = cfg.confidence;
  if (cfg.k_policy.kind == KPolicy::Kind::fixed) {
    p.threshold = 0.0;
    p.recommend_k = std::max(p.recommend_k, cfg.k_policy.k);
  } else {
    p.threshold = cfg.k_policy.threshold;
  }
  return p;
}

void apply_policy(MappingResult& result, const KPolicy& policy) {
  if (!result.ok()) return;
  const auto keep = apply_policy(result.scored, policy);
  std::vector<Recommendation> recs;
  for (const auto& s : result.scored) {
    if (s.confidence && keep.count(s.id)) recs.push_back({s.id, s.rationale, *s.confidence});
  }
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.id < b.id;
  });
  result.recommendations = std::move(recs);
}

std::shared_ptr<const AttackKb> load_kb(const std::filesystem::path& path) {
  if (path.empty()) throw Error(Errc::ConfigError, "no ATT&CK knowledge base given (--kb)");
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::IoError, "knowledge base not found: " + path.string(), path.string());
  }
  const std::string text = read_file(path);
  // Snapshots are compact JSON with this exact marker; anything else is
  // treated as a STIX bundle.
  if (text.find("\"format\":\"siemmap-kb\"") != std::string::npos) {
    return std::make_shared<AttackKb>(load_snapshot(text));
  }
  return std::make_shared<AttackKb>(ingest_stix(text));
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<std::string> std_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

}  // namespace

Session open_session(const RunConfig& cfg, std::shared_ptr<Transport> transport, EnvLookup env) {
  if (!transport) transport = std::make_shared<HttpTransport>();
  if (!env) env = std_env;

  Session s;
  s.config = cfg;
  s.kb = load_kb(cfg.kb_path);

  std::optional<FixtureBundle> fixtures;
  if (!cfg.fixtures.empty()) {
    if (!std::filesystem::exists(cfg.fixtures)) {
      throw Error(Errc::ConfigError, "fixture bundle not found: " + cfg.fixtures.string(),
                  cfg.fixtures.string());
    }
    fixtures = load_fixture_bundle(cfg.fixtures);
    s.fixtures_hash = fixtures->content_hash;
  }

  const bool caching = cfg.cache_mode != CacheMode::off;
  if (caching && cfg.cache_dir.empty()) {
    throw Error(Errc::ConfigError, "cache mode " + std::string(cache_mode_name(cfg.cache_mode)) +
                                       " needs --cache-dir");
  }
  if (cfg.cache_mode == CacheMode::replay && !std::filesystem::exists(cfg.cache_dir)) {
    throw Error(Errc::ConfigError, "replay cache directory not found: " + cfg.cache_dir.string(),
                cfg.cache_dir.string());
  }

  // Model backend.
  std::shared_ptr<ChatBackend> backend;
  std::string api_key;
  if (cfg.backend == "mock") {
    if (!fixtures) throw Error(Errc::ConfigError, "the mock backend needs --fixtures");
    backend = make_mock_backend(*fixtures);
  } else if (cfg.backend == "remote" || cfg.backend == "local") {
    RemoteBackendConfig rc;
    rc.kind = cfg.backend == "remote" ? RemoteKind::remote : RemoteKind::local_server;
    rc.model = cfg.model;
    if (!cfg.base_url.empty()) rc.base_url = cfg.base_url;
    else if (rc.kind == RemoteKind::local_server) rc.base_url = "http://127.0.0.1:8080/v1";
    api_key = env(cfg.api_key_env).value_or("");
    rc.api_key = api_key;
    // Replay never reaches the backend, so a missing key is only an error
    // when calls can actually happen.
    if (rc.kind == RemoteKind::remote && api_key.empty() && cfg.cache_mode != CacheMode::replay) {
      throw Error(Errc::ConfigError, "remote backend needs an API key in $" + cfg.api_key_env);
    }
    backend = std::make_shared<RemoteChatBackend>(rc, transport);
  } else {
    throw Error(Errc::ConfigError, "unknown backend '" + cfg.backend + "'", cfg.backend);
  }

  GatewayConfig gc;
  gc.params.temperature = cfg.temperature;
  gc.cache_mode = cfg.cache_mode;
  gc.max_in_flight = std::max(1u, cfg.concurrency);
  gc.max_calls = cfg.max_calls;
  gc.max_tokens = cfg.max_tokens;
  std::shared_ptr<ResponseCache> cache;
  if (caching) cache = std::make_shared<ResponseCache>(cfg.cache_dir / "responses.cache");
  s.deps.gateway = std::make_shared<Gateway>(gc, backend, cache);

  // Embedder and index.
  std::shared_ptr<const Embedder> embedder;
  if (cfg.embedder == "hash") {
    embedder = std::make_shared<HashingEmbedder>();
  } else if (cfg.embedder == "remote") {
    RemoteEmbedderConfig ec;
    ec.model = cfg.embedding_model;
    if (!cfg.base_url.empty()) ec.base_url = cfg.base_url;
    ec.api_key = api_key;
    embedder = std::make_shared<RemoteEmbedder>(ec, transport, s.deps.gateway->limiter());
  } else {
    throw Error(Errc::ConfigError, "unknown embedder '" + cfg.embedder + "'", cfg.embedder);
  }
  if (caching && cfg.embedder != "hash") {
    auto log = std::make_shared<KeyValueLog>(cfg.cache_dir / "embeddings.jsonl");
    embedder = std::make_shared<CachingEmbedder>(embedder, log, cfg.cache_mode);
  }
  s.deps.embedder = embedder;
  if (!cfg.index_path.empty() && std::filesystem::exists(cfg.index_path)) {
    s.deps.index = std::make_shared<VectorIndex>(VectorIndex::load(read_file(cfg.index_path), *embedder));
  } else {
    s.deps.index = std::make_shared<VectorIndex>(build_kb_index(*s.kb, *embedder));
  }

  // Web search.
  std::shared_ptr<SearchTool> search;
  std::string mode = cfg.search;
  if (mode == "auto") mode = fixtures && !fixtures->search.empty() ? "fixtures" : "none";
  if (mode == "fixtures") {
    if (!fixtures) throw Error(Errc::ConfigError, "search=fixtures needs --fixtures");
    search = std::make_shared<FixtureSearchTool>(fixtures->search);
  } else if (mode == "live") {
    search = std::make_shared<LiveSearchTool>(LiveSearchConfig{cfg.search_endpoint}, transport);
  } else if (mode == "none") {
    search = std::make_shared<NullSearchTool>();
  } else {
    throw Error(Errc::ConfigError, "unknown search tool '" + cfg.search + "'", cfg.search);
  }
  if (caching && mode == "live") {
    auto log = std::make_shared<KeyValueLog>(cfg.cache_dir / "search.jsonl");
    search = std::make_shared<CachingSearchTool>(search, log, cfg.cache_mode);
  }
  s.deps.search = search;

  if (caching) {
    s.deps.enrichment_cache = std::make_shared<EnrichmentCache>(cfg.cache_dir / "enrichment.jsonl");
  }
  s.deps.kb = s.kb;
  // Offline runs stamp a fixed epoch so their outputs stay byte-identical.
  const bool offline = cfg.backend == "mock" || cfg.cache_mode == CacheMode::replay;
  if (!offline) s.deps.clock = utc_now;
  return s;
}

ExperimentManifest make_manifest(const Session& s, const std::string& command,
                                 const std::string& corpus_hash) {
  const RunConfig& c = s.config;
  ExperimentManifest m;
  m.command = command;
  m.corpus_hash = corpus_hash;
  m.kb_version = s.kb ? s.kb->version() : "";
  m.backend_id = s.deps.gateway ? s.deps.gateway->backend_id() : "";
  m.mode = mode_name(c.mode);
  m.policy = format_k_policy(c.k_policy);
  m.semantics = semantics_name(c.semantics);
  m.params = {{"cutoff", format_date(c.cutoff)},
              {"recommend_k", std::to_string(c.recommend_k)},
              {"retrieval_k", std::to_string(c.retrieval_k)},
              {"confidence", std::string(confidence_method_name(c.confidence))},
              {"max_search_iterations", std::to_string(c.max_search_iterations)},
              {"embedder", s.deps.embedder ? s.deps.embedder->id() : ""},
              {"search", c.search},
              {"temperature", std::to_string(c.temperature)},
              {"fixtures_hash", s.fixtures_hash}};
  if (c.domain) m.params["domain"] = std::string(domain_name(*c.domain));
  m.created_at = utc_now();
  return m;
}

}  // namespace siemmap
