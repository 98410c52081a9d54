#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "toolqp/corpus.hpp"
#include "toolqp/embedder.hpp"

namespace toolqp {

struct RetrievalHit {
  std::string tool_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const RetrievalHit& other) const {
    return tool_id == other.tool_id && score == other.score && rank == other.rank;
  }
};

// One ranked list produced by one query.
struct RetrievalRun {
  std::string query_text;
  std::vector<RetrievalHit> hits;

  bool operator==(const RetrievalRun& other) const {
    return query_text == other.query_text && hits == other.hits;
  }
};

// Brute-force cosine index over the rendered corpus. Immutable after build;
// concurrent searches are safe.
class Index {
 public:
  static Index build(const ToolCorpus& corpus, Embedder& embedder, RenderStyle style);

  static Index load(const std::string& path, const ToolCorpus& corpus);
  void save(const std::string& path) const;

  RetrievalRun search(const std::string& query, std::size_t k, Embedder& embedder) const;

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& backend_name() const { return backend_name_; }
  RenderStyle render_style() const { return render_style_; }
  std::uint64_t corpus_hash() const { return corpus_hash_; }
  const std::vector<float>& vector_at(std::size_t pos) const { return vectors_.at(pos); }

 private:
  std::vector<std::string> ids_;        // corpus order
  std::vector<std::vector<float>> vectors_;  // L2-normalized rows
  std::size_t dim_ = 0;
  std::string backend_name_;
  RenderStyle render_style_ = RenderStyle::kSchemaJson;
  std::uint64_t corpus_hash_ = 0;
};

// Couples an index with the embedder that built it, so queries embed the same way.
class Retriever {
 public:
  Retriever(Index index, std::shared_ptr<Embedder> embedder)
      : index_(std::move(index)), embedder_(std::move(embedder)) {}

  RetrievalRun search(const std::string& query, std::size_t k) const {
    return index_.search(query, k, *embedder_);
  }

  const Index& index() const { return index_; }
  Embedder& embedder() const { return *embedder_; }

 private:
  Index index_;
  std::shared_ptr<Embedder> embedder_;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Lexical fallback; scores standard BM25 over tokenized rendered docs.
// Tools matching no query term are omitted, so a no-match query yields an empty run.
RetrievalRun search_bm25(const ToolCorpus& corpus, const std::string& query, std::size_t k,
                         RenderStyle style = RenderStyle::kSchemaJson, Bm25Params params = {});

}  // namespace toolqp
