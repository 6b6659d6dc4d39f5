#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace siemmap {

struct HttpRequest {
  std::string method = "POST";
  std::string url;  // absolute: scheme://host[:port]/path[?query]
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Every network operation in the library goes through a Transport, which
/// is what lets tests count (or forbid) them.
class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws Error(BackendUnavailable) when no response could be obtained.
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// cpp-httplib client; https when built with OpenSSL.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::chrono::seconds timeout = std::chrono::seconds{120})
      : timeout_(timeout) {}
  HttpResponse send(const HttpRequest& request) override;

 private:
  std::chrono::seconds timeout_;
};

/// Wraps another transport (or a handler) and counts calls.
class CountingTransport final : public Transport {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;

  explicit CountingTransport(Handler handler) : handler_(std::move(handler)) {}
  explicit CountingTransport(std::shared_ptr<Transport> inner)
      : handler_([inner](const HttpRequest& r) { return inner->send(r); }) {}

  HttpResponse send(const HttpRequest& request) override {
    ++calls_;
    return handler_(request);
  }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  Handler handler_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace siemmap
