#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siemmap/rate_limiter.hpp"
#include "siemmap/transport.hpp"

namespace siemmap {

struct Embedding {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
};

double l2_norm(std::span<const double> v) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;
/// Cosine similarity; 0 when either side is the zero vector.
double cosine(std::span<const double> a, std::span<const double> b) noexcept;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;

 protected:
  friend Embedding embed(std::string_view text, const Embedder& backend);
  /// Called with non-empty text only.
  virtual Embedding embed_nonempty(std::string_view text) const = 0;
};

/// Throws Error(EmptyText) for blank input and Error(BackendUnavailable)
/// when the backend fails or returns a wrong-sized / non-finite vector.
Embedding embed(std::string_view text, const Embedder& backend);

/// Offline embedder: feature-hashed character 3- and 4-grams of the
/// lowercased, whitespace-collapsed text, L2-normalized.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 256) : dim_(dim) {}
  std::string id() const override { return "hash-ngram-" + std::to_string(dim_); }
  std::size_t dim() const override { return dim_; }

 protected:
  Embedding embed_nonempty(std::string_view text) const override;

 private:
  std::size_t dim_;
};

struct RemoteEmbedderConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "text-embedding-3-small";
  std::string api_key;
  std::size_t dim = 1536;
};

/// OpenAI-compatible /embeddings endpoint.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(RemoteEmbedderConfig config, std::shared_ptr<Transport> transport,
                 std::shared_ptr<RateLimiter> limiter = nullptr)
      : config_(std::move(config)), transport_(std::move(transport)), limiter_(std::move(limiter)) {}
  std::string id() const override { return "remote:" + config_.model; }
  std::size_t dim() const override { return config_.dim; }

 protected:
  Embedding embed_nonempty(std::string_view text) const override;

 private:
  RemoteEmbedderConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<RateLimiter> limiter_;
};

}  // namespace siemmap
