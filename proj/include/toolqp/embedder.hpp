#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "toolqp/error.hpp"

namespace toolqp {

struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
};

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Encoding half of the retrieval environment. Implementations must produce
// vectors of a constant dimension and identify themselves by a stable name.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string backend_name() const = 0;

  EmbeddingVector embed(const std::string& text);
};

// Deterministic test backend: character-trigram counts hashed into `dim`
// buckets, L2-normalized. Texts sharing trigrams get positive cosine.
class HashEmbedder : public Embedder {
 public:
  HashEmbedder(std::size_t dim, std::uint64_t seed);

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;
  std::size_t dim() const override { return dim_; }
  std::string backend_name() const override;

  // The grams a text contributes, exposed so tests can oracle overlap counts.
  static std::vector<std::string> extract_grams(const std::string& text);

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct RemoteEmbedderConfig {
  std::string endpoint;            // e.g. "http://127.0.0.1:8080"
  std::string path = "/v1/embeddings";
  std::string model;
  std::string api_key;             // empty -> no Authorization header
  std::string instruction;         // optional prefix for instruction-tuned backends
  std::size_t max_batch_size = 64;
  int max_retries = 3;             // retries after the first attempt
  int backoff_initial_ms = 100;
  int timeout_seconds = 60;
};

// Client for an OpenAI-style embedding endpoint. Batches requests, retries
// transient failures with exponential backoff.
class RemoteEmbedder : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteEmbedderConfig config);
  ~RemoteEmbedder() override;

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;
  std::size_t dim() const override { return dim_; }
  std::string backend_name() const override;

  // Attempts used by the most recent HTTP call (for diagnostics and tests).
  int last_attempts() const { return last_attempts_; }

 private:
  std::vector<EmbeddingVector> request_batch(const std::vector<std::string>& texts);

  RemoteEmbedderConfig config_;
  std::size_t dim_ = 0;  // learned from the first response
  int last_attempts_ = 0;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace toolqp
