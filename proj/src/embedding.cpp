#include "siemmap/embedding.hpp"

#include <cctype>
#include <cmath>
#include <optional>

#include <nlohmann/json.hpp>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

double l2_norm(std::span<const double> v) noexcept { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double cosine(std::span<const double> a, std::span<const double> b) noexcept {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

Embedding embed(std::string_view text, const Embedder& backend) {
  if (trim(text).empty()) throw Error(Errc::EmptyText, "cannot embed empty text");
  Embedding e = backend.embed_nonempty(text);
  if (e.dim() != backend.dim()) {
    throw Error(Errc::BackendUnavailable,
                "embedder " + backend.id() + " returned dim " + std::to_string(e.dim()) +
                    ", declared " + std::to_string(backend.dim()));
  }
  for (double v : e.values) {
    if (!std::isfinite(v)) {
      throw Error(Errc::BackendUnavailable, "embedder " + backend.id() + " returned a non-finite value");
    }
  }
  return e;
}

Embedding HashingEmbedder::embed_nonempty(std::string_view text) const {
  std::string norm = " ";
  bool space = true;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!space) norm.push_back(' ');
      space = true;
    } else {
      norm.push_back(static_cast<char>(std::tolower(c)));
      space = false;
    }
  }
  if (!space) norm.push_back(' ');

  Embedding e{std::vector<double>(dim_, 0.0)};
  std::string_view view(norm);
  for (std::size_t n : {3u, 4u}) {
    if (view.size() < n) continue;
    for (std::size_t i = 0; i + n <= view.size(); ++i) {
      // salt by n so a 3-gram and a 4-gram never share a hash stream
      const std::uint64_t h = fnv1a64(view.substr(i, n)) ^ (0x9e3779b97f4a7c15ULL * n);
      e.values[h % dim_] += 1.0;
    }
  }
  const double norm2 = l2_norm(e.values);
  if (norm2 > 0.0) {
    for (double& v : e.values) v /= norm2;
  }
  return e;
}

Embedding RemoteEmbedder::embed_nonempty(std::string_view text) const {
  nlohmann::json body = {{"model", config_.model}, {"input", std::string(text)}};
  HttpRequest req;
  req.url = config_.base_url + "/embeddings";
  req.headers = {{"Content-Type", "application/json"}};
  if (!config_.api_key.empty()) req.headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  req.body = body.dump();

  HttpResponse resp;
  {
    std::optional<RateLimiter::Permit> permit;
    if (limiter_) permit.emplace(limiter_->acquire());
    resp = transport_->send(req);
  }
  if (resp.status != 200) {
    throw Error(Errc::BackendUnavailable,
                "embedding endpoint returned HTTP " + std::to_string(resp.status), resp.body);
  }
  try {
    auto parsed = nlohmann::json::parse(resp.body);
    return Embedding{parsed.at("data").at(0).at("embedding").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BackendUnavailable, std::string("bad embedding response: ") + e.what(), resp.body);
  }
}

}  // namespace siemmap
