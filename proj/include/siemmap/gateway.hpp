#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "siemmap/rate_limiter.hpp"
#include "siemmap/transport.hpp"

namespace siemmap {

enum class Stage { ioc_extract, context_retrieve, translate, datasource_id, recommend, compare, score };

std::string_view stage_name(Stage s) noexcept;
/// Throws Error(ConfigError) for unknown names.
Stage parse_stage(std::string_view name);

struct ModelParams {
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct ModelCall {
  Stage stage = Stage::ioc_extract;
  std::string prompt;
  ModelParams params;
  std::string backend_id;
};

/// Hex SHA-256 over the length-prefixed (stage, prompt, params, backend id).
std::string cache_key(const ModelCall& call);

struct TokenUsage {
  std::uint64_t prompt = 0;
  std::uint64_t completion = 0;
};

struct ModelReply {
  std::string text;
  TokenUsage usage;
  bool cached = false;
};

/// A chat-completion backend. Implementations throw
/// Error(BackendUnavailable) for transient failures; the gateway retries
/// those.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string id() const = 0;
  virtual ModelReply complete(const ModelCall& call) = 0;
};

enum class RemoteKind { remote, local_server };

struct RemoteBackendConfig {
  RemoteKind kind = RemoteKind::remote;
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4-turbo";
  std::string api_key;  // required for `remote`, checked at call time
};

/// OpenAI-compatible /chat/completions endpoint (hosted, or a local server
/// such as llama.cpp or vLLM).
class RemoteChatBackend final : public ChatBackend {
 public:
  RemoteChatBackend(RemoteBackendConfig config, std::shared_ptr<Transport> transport)
      : config_(std::move(config)), transport_(std::move(transport)) {}
  std::string id() const override;
  ModelReply complete(const ModelCall& call) override;

 private:
  RemoteBackendConfig config_;
  std::shared_ptr<Transport> transport_;
};

/// One canned reply: used when every `when` substring occurs in the prompt.
struct FixtureReply {
  std::vector<std::string> when;
  std::string reply;
};

/// Offline backend answering from per-stage fixture tables; first match
/// wins. Token usage is the whitespace word count of prompt and reply.
class MockBackend final : public ChatBackend {
 public:
  MockBackend(std::map<Stage, std::vector<FixtureReply>> table, std::string id_suffix);
  std::string id() const override { return "mock:" + id_suffix_; }
  ModelReply complete(const ModelCall& call) override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::map<Stage, std::vector<FixtureReply>> table_;
  std::string id_suffix_;
  std::atomic<std::size_t> calls_{0};
};

struct CachedReply {
  std::string stage;
  std::string text;
  TokenUsage usage;
};

/// Append-only record/replay store. On disk each record is a header line
/// `@rec <hex key> <stage> <prompt tokens> <completion tokens> <text bytes>`
/// followed by exactly that many bytes of reply text and a newline. Later
/// records for the same key win.
class ResponseCache {
 public:
  /// In-memory only.
  ResponseCache() = default;
  /// Loads existing records from `path` (missing file is an empty cache);
  /// appends go to the same file.
  explicit ResponseCache(std::filesystem::path path);

  std::optional<CachedReply> find(const std::string& key) const;
  void append(const std::string& key, const CachedReply& reply);
  std::size_t size() const;

  static std::string encode(const std::string& key, const CachedReply& reply);

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, CachedReply> records_;
};

enum class CacheMode { off, record, replay, read_through };

std::string_view cache_mode_name(CacheMode m) noexcept;
CacheMode parse_cache_mode(std::string_view name);

struct GatewayConfig {
  ModelParams params;
  std::map<Stage, int> max_tokens_per_stage;  // overrides params.max_tokens
  CacheMode cache_mode = CacheMode::off;
  unsigned max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
  unsigned max_in_flight = 4;
  unsigned requests_per_minute = 0;
  std::uint64_t max_calls = 0;   // 0: unlimited
  std::uint64_t max_tokens = 0;  // 0: unlimited
};

struct GatewayStats {
  std::uint64_t backend_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t retries = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

/// Single choke point for model calls. Thread-safe.
class Gateway {
 public:
  Gateway(GatewayConfig config, std::shared_ptr<ChatBackend> backend,
          std::shared_ptr<ResponseCache> cache = nullptr);

  /// Throws Error(CacheMiss) in replay mode when the key is absent,
  /// Error(BudgetExceeded) before a backend call that would exceed the
  /// budget, Error(BackendUnavailable) after exhausting retries.
  ModelReply complete(Stage stage, std::string prompt);
  ModelReply complete(const ModelCall& call);

  ModelCall make_call(Stage stage, std::string prompt) const;
  const std::string& backend_id() const noexcept { return backend_id_; }
  const GatewayConfig& config() const noexcept { return config_; }
  std::shared_ptr<RateLimiter> limiter() const noexcept { return limiter_; }
  GatewayStats stats() const;

 private:
  ModelReply call_backend(const ModelCall& call);

  GatewayConfig config_;
  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  std::shared_ptr<RateLimiter> limiter_;
  std::string backend_id_;

  std::atomic<std::uint64_t> backend_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> retries_{0};
  std::atomic<std::uint64_t> prompt_tokens_{0};
  std::atomic<std::uint64_t> completion_tokens_{0};
};

}  // namespace siemmap
