#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "siemmap/transport.hpp"

#include <httplib.h>

#include "siemmap/error.hpp"

namespace siemmap {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::ConfigError, "URL without scheme: " + url, url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpResponse HttpTransport::send(const HttpRequest& request) {
  const auto [origin, path] = split_url(request.url);
  httplib::Client client(origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  httplib::Headers headers;
  std::string content_type = "application/json";
  for (const auto& [k, v] : request.headers) {
    if (k == "Content-Type") {
      content_type = v;
    } else {
      headers.emplace(k, v);
    }
  }

  httplib::Result res;
  if (request.method == "GET") {
    res = client.Get(path, headers);
  } else {
    res = client.Post(path, headers, request.body, content_type);
  }
  if (!res) {
    throw Error(Errc::BackendUnavailable,
                "HTTP " + request.method + " " + request.url + " failed: " + httplib::to_string(res.error()),
                request.url);
  }
  return {res->status, res->body};
}

}  // namespace siemmap
