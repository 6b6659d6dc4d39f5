#include "siemmap/gateway.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

std::string_view stage_name(Stage s) noexcept {
  switch (s) {
    case Stage::ioc_extract: return "ioc_extract";
    case Stage::context_retrieve: return "context_retrieve";
    case Stage::translate: return "translate";
    case Stage::datasource_id: return "datasource_id";
    case Stage::recommend: return "recommend";
    case Stage::compare: return "compare";
    case Stage::score: return "score";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::ioc_extract, Stage::context_retrieve, Stage::translate,
                  Stage::datasource_id, Stage::recommend, Stage::compare, Stage::score}) {
    if (stage_name(s) == name) return s;
  }
  throw Error(Errc::ConfigError, "unknown stage '" + std::string(name) + "'", std::string(name));
}

std::string_view cache_mode_name(CacheMode m) noexcept {
  switch (m) {
    case CacheMode::off: return "off";
    case CacheMode::record: return "record";
    case CacheMode::replay: return "replay";
    case CacheMode::read_through: return "read-through";
  }
  return "off";
}

CacheMode parse_cache_mode(std::string_view name) {
  for (CacheMode m : {CacheMode::off, CacheMode::record, CacheMode::replay, CacheMode::read_through}) {
    if (cache_mode_name(m) == name) return m;
  }
  throw Error(Errc::ConfigError, "unknown cache mode '" + std::string(name) + "'", std::string(name));
}

std::string cache_key(const ModelCall& call) {
  std::string buf = "siemmap-call-v1";
  auto field = [&](std::string_view v) {
    buf += '\0';
    buf += std::to_string(v.size());
    buf += ':';
    buf += v;
  };
  char temp[40];
  std::snprintf(temp, sizeof temp, "%.17g", call.params.temperature);
  field(stage_name(call.stage));
  field(call.prompt);
  field(temp);
  field(std::to_string(call.params.max_tokens));
  field(call.backend_id);
  return sha256_hex(buf);
}

// ---------------------------------------------------------------------------
// Backends

std::string RemoteChatBackend::id() const {
  return std::string(config_.kind == RemoteKind::remote ? "remote:" : "local:") + config_.model;
}

ModelReply RemoteChatBackend::complete(const ModelCall& call) {
  if (config_.kind == RemoteKind::remote && config_.api_key.empty()) {
    throw Error(Errc::ConfigError, "remote backend needs an API key");
  }
  nlohmann::json body = {
      {"model", config_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", call.prompt}}})},
      {"temperature", call.params.temperature},
      {"max_tokens", call.params.max_tokens}};
  HttpRequest req;
  req.url = config_.base_url + "/chat/completions";
  req.headers = {{"Content-Type", "application/json"}};
  if (!config_.api_key.empty()) req.headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  req.body = body.dump();

  const HttpResponse resp = transport_->send(req);
  if (resp.status != 200) {
    throw Error(Errc::BackendUnavailable,
                "chat endpoint returned HTTP " + std::to_string(resp.status), resp.body);
  }
  try {
    auto parsed = nlohmann::json::parse(resp.body);
    ModelReply reply;
    reply.text = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    if (auto u = parsed.find("usage"); u != parsed.end() && u->is_object()) {
      reply.usage.prompt = u->value("prompt_tokens", 0ull);
      reply.usage.completion = u->value("completion_tokens", 0ull);
    }
    return reply;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BackendUnavailable, std::string("bad chat response: ") + e.what(), resp.body);
  }
}

namespace {

std::uint64_t word_count(std::string_view s) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (unsigned char c : s) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

MockBackend::MockBackend(std::map<Stage, std::vector<FixtureReply>> table, std::string id_suffix)
    : table_(std::move(table)), id_suffix_(std::move(id_suffix)) {}

ModelReply MockBackend::complete(const ModelCall& call) {
  ++calls_;
  auto it = table_.find(call.stage);
  if (it != table_.end()) {
    for (const auto& fx : it->second) {
      bool all = true;
      for (const auto& needle : fx.when) {
        if (call.prompt.find(needle) == std::string::npos) {
          all = false;
          break;
        }
      }
      if (all) return {fx.reply, {word_count(call.prompt), word_count(fx.reply)}, false};
    }
  }
  throw Error(Errc::BackendUnavailable,
              "no fixture reply for stage " + std::string(stage_name(call.stage)), call.prompt);
}

// ---------------------------------------------------------------------------
// Cache

std::string ResponseCache::encode(const std::string& key, const CachedReply& reply) {
  std::string out = "@rec " + key + " " + reply.stage + " " + std::to_string(reply.usage.prompt) +
                    " " + std::to_string(reply.usage.completion) + " " +
                    std::to_string(reply.text.size()) + "\n";
  out += reply.text;
  out += '\n';
  return out;
}

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  const std::string data = read_file(path_);
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto eol = data.find('\n', pos);
    if (eol == std::string::npos) break;  // torn final header
    std::istringstream header(data.substr(pos, eol - pos));
    std::string tag, key, stage;
    CachedReply rec;
    std::size_t len = 0;
    if (!(header >> tag >> key >> stage >> rec.usage.prompt >> rec.usage.completion >> len) ||
        tag != "@rec" || key.size() != 64) {
      throw Error(Errc::IoError, "corrupt cache record at byte " + std::to_string(pos) + " of " +
                                     path_.string(), path_.string());
    }
    const std::size_t body = eol + 1;
    if (body + len + 1 > data.size()) break;  // torn final record
    if (data[body + len] != '\n') {
      throw Error(Errc::IoError, "cache record length mismatch in " + path_.string(), path_.string());
    }
    rec.stage = stage;
    rec.text = data.substr(body, len);
    records_[key] = std::move(rec);
    pos = body + len + 1;
  }
}

std::optional<CachedReply> ResponseCache::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::append(const std::string& key, const CachedReply& reply) {
  std::lock_guard lock(mu_);
  if (!path_.empty()) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    const std::string rec = encode(key, reply);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    if (!out) throw Error(Errc::IoError, "cannot append to cache " + path_.string(), path_.string());
  }
  records_[key] = reply;
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(GatewayConfig config, std::shared_ptr<ChatBackend> backend,
                 std::shared_ptr<ResponseCache> cache)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      limiter_(std::make_shared<RateLimiter>(config_.max_in_flight, config_.requests_per_minute)),
      backend_id_(backend_->id()) {
  if (config_.cache_mode != CacheMode::off && !cache_) cache_ = std::make_shared<ResponseCache>();
  if (config_.max_attempts == 0) config_.max_attempts = 1;
}

ModelCall Gateway::make_call(Stage stage, std::string prompt) const {
  ModelCall call{stage, std::move(prompt), config_.params, backend_id_};
  if (auto it = config_.max_tokens_per_stage.find(stage); it != config_.max_tokens_per_stage.end()) {
    call.params.max_tokens = it->second;
  }
  return call;
}

ModelReply Gateway::complete(Stage stage, std::string prompt) {
  return complete(make_call(stage, std::move(prompt)));
}

ModelReply Gateway::complete(const ModelCall& call) {
  if (config_.cache_mode == CacheMode::off) return call_backend(call);

  const std::string key = cache_key(call);
  if (config_.cache_mode == CacheMode::replay || config_.cache_mode == CacheMode::read_through) {
    if (auto hit = cache_->find(key)) {
      ++cache_hits_;
      return {hit->text, hit->usage, true};
    }
    if (config_.cache_mode == CacheMode::replay) {
      throw Error(Errc::CacheMiss,
                  "no recorded reply for stage " + std::string(stage_name(call.stage)) + " key " + key,
                  key);
    }
  }
  ModelReply reply = call_backend(call);
  cache_->append(key, {std::string(stage_name(call.stage)), reply.text, reply.usage});
  return reply;
}

ModelReply Gateway::call_backend(const ModelCall& call) {
  if (config_.max_calls != 0 && backend_calls_.fetch_add(1) >= config_.max_calls) {
    --backend_calls_;
    throw Error(Errc::BudgetExceeded, "call budget of " + std::to_string(config_.max_calls) + " exhausted");
  }
  if (config_.max_calls == 0) ++backend_calls_;
  if (config_.max_tokens != 0 && prompt_tokens_ + completion_tokens_ >= config_.max_tokens) {
    throw Error(Errc::BudgetExceeded,
                "token budget of " + std::to_string(config_.max_tokens) + " exhausted");
  }

  thread_local std::mt19937 jitter_rng{std::random_device{}()};
  for (unsigned attempt = 1;; ++attempt) {
    try {
      ModelReply reply;
      {
        auto permit = limiter_->acquire();
        reply = backend_->complete(call);
      }
      if (trim(reply.text).empty()) {
        throw Error(Errc::BackendUnavailable, "backend returned an empty reply");
      }
      prompt_tokens_ += reply.usage.prompt;
      completion_tokens_ += reply.usage.completion;
      reply.cached = false;
      return reply;
    } catch (const Error& e) {
      if (e.code() != Errc::BackendUnavailable || attempt >= config_.max_attempts) throw;
      ++retries_;
      const double jitter = std::uniform_real_distribution<double>(1.0, 1.25)(jitter_rng);
      const auto delay = std::chrono::duration<double, std::milli>(
          static_cast<double>(config_.backoff_base.count()) * static_cast<double>(1u << (attempt - 1)) * jitter);
      std::this_thread::sleep_for(delay);
    }
  }
}

GatewayStats Gateway::stats() const {
  return {backend_calls_.load(), cache_hits_.load(), retries_.load(), prompt_tokens_.load(),
          completion_tokens_.load()};
}

}  // namespace siemmap
