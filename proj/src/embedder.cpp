#include "toolqp/embedder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "toolqp/strings.hpp"

namespace toolqp {

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kInvalidArgument, "cosine: dimension mismatch " +
                                                 std::to_string(a.dim()) + " vs " +
                                                 std::to_string(b.dim()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += static_cast<double>(a.values[i]) * b.values[i];
    na += static_cast<double>(a.values[i]) * a.values[i];
    nb += static_cast<double>(b.values[i]) * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(cosine, -1.0, 1.0);
}

EmbeddingVector Embedder::embed(const std::string& text) {
  auto vectors = embed_batch({text});
  if (vectors.size() != 1) {
    throw Error(ErrorCode::kBackend, "embed_batch returned " + std::to_string(vectors.size()) +
                                         " vectors for one text");
  }
  return std::move(vectors[0]);
}

HashEmbedder::HashEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 8) {
    throw Error(ErrorCode::kInvalidArgument, "hash embedder dim must be >= 8");
  }
}

std::vector<std::string> HashEmbedder::extract_grams(const std::string& text) {
  std::string normalized = " " + to_lower(normalize_whitespace(text)) + " ";
  std::vector<std::string> grams;
  if (normalized.size() < 3) return grams;
  for (std::size_t i = 0; i + 3 <= normalized.size(); ++i) {
    grams.push_back(normalized.substr(i, 3));
  }
  return grams;
}

std::vector<EmbeddingVector> HashEmbedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const std::string& text : texts) {
    EmbeddingVector vec;
    vec.values.assign(dim_, 0.0f);
    for (const std::string& gram : extract_grams(text)) {
      std::uint64_t bucket = fnv1a64(gram, fnv1a64("", seed_ ^ 1469598103934665603ull)) % dim_;
      vec.values[bucket] += 1.0f;
    }
    double norm = 0.0;
    for (float v : vec.values) norm += static_cast<double>(v) * v;
    if (norm > 0.0) {
      float inv = static_cast<float>(1.0 / std::sqrt(norm));
      for (float& v : vec.values) v *= inv;
    }
    out.push_back(std::move(vec));
  }
  return out;
}

std::string HashEmbedder::backend_name() const {
  return "hash-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

struct RemoteEmbedder::Impl {
  explicit Impl(const RemoteEmbedderConfig& config) : client(config.endpoint) {
    client.set_connection_timeout(config.timeout_seconds, 0);
    client.set_read_timeout(config.timeout_seconds, 0);
  }
  httplib::Client client;
  std::mutex mutex;  // serializes requests on the shared connection
};

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_)) {}

RemoteEmbedder::~RemoteEmbedder() = default;

std::string RemoteEmbedder::backend_name() const {
  return "remote:" + config_.model;
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += config_.max_batch_size) {
    std::size_t end = std::min(texts.size(), begin + config_.max_batch_size);
    std::vector<std::string> batch(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                   texts.begin() + static_cast<std::ptrdiff_t>(end));
    auto vectors = request_batch(batch);
    for (auto& vec : vectors) out.push_back(std::move(vec));
  }
  return out;
}

std::vector<EmbeddingVector> RemoteEmbedder::request_batch(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  std::lock_guard<std::mutex> lock(impl_->mutex);

  nlohmann::json body;
  body["model"] = config_.model;
  auto& input = body["input"] = nlohmann::json::array();
  for (const std::string& text : texts) {
    input.push_back(config_.instruction.empty() ? text : config_.instruction + text);
  }
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  std::string failure;
  int delay_ms = config_.backoff_initial_ms;
  const int max_attempts = config_.max_retries + 1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    last_attempts_ = attempt;
    auto res = impl_->client.Post(config_.path, headers, payload, "application/json");
    if (!res) {
      failure = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 429 || res->status >= 500) {
      failure = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw Error(ErrorCode::kBackend, "embedding endpoint " + config_.endpoint + " returned HTTP " +
                                           std::to_string(res->status));
    } else {
      nlohmann::json reply;
      try {
        reply = nlohmann::json::parse(res->body);
      } catch (const std::exception& e) {
        throw Error(ErrorCode::kBackend,
                    "embedding endpoint " + config_.endpoint + " returned invalid JSON: " + e.what());
      }
      if (!reply.contains("data") || !reply["data"].is_array() ||
          reply["data"].size() != texts.size()) {
        throw Error(ErrorCode::kBackend, "embedding endpoint " + config_.endpoint +
                                             " returned wrong number of vectors");
      }
      std::vector<EmbeddingVector> vectors;
      vectors.reserve(texts.size());
      for (const auto& item : reply["data"]) {
        EmbeddingVector vec;
        for (const auto& v : item.at("embedding")) {
          const float value = v.get<float>();
          if (!std::isfinite(value)) {
            throw Error(ErrorCode::kBackend,
                        "embedding endpoint " + config_.endpoint + " returned a non-finite value");
          }
          vec.values.push_back(value);
        }
        if (dim_ == 0) dim_ = vec.dim();
        if (vec.dim() != dim_) {
          throw Error(ErrorCode::kBackend, "embedding dimension mismatch within batch: " +
                                               std::to_string(vec.dim()) + " vs " +
                                               std::to_string(dim_));
        }
        vectors.push_back(std::move(vec));
      }
      return vectors;
    }
    if (attempt < max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
  throw Error(ErrorCode::kBackend, "embedding endpoint " + config_.endpoint + " failed after " +
                                       std::to_string(max_attempts) + " attempts: " + failure);
}

}  // namespace toolqp
