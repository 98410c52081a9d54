#include "toolqp/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

constexpr char kIndexMagic[] = "TQPIDX1";

}  // namespace

Index Index::build(const ToolCorpus& corpus, Embedder& embedder, RenderStyle style) {
  if (corpus.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cannot build an index over an empty corpus");
  }
  Index index;
  index.render_style_ = style;
  index.backend_name_ = embedder.backend_name();
  index.corpus_hash_ = corpus.content_hash();

  std::vector<std::string> docs;
  docs.reserve(corpus.size());
  for (const ToolDoc& tool : corpus.tools()) {
    index.ids_.push_back(tool.id);
    docs.push_back(render_tool_doc(tool, style));
  }
  std::vector<EmbeddingVector> vectors;
  try {
    vectors = embedder.embed_batch(docs);
  } catch (const Error& e) {
    throw Error(e.code(), std::string("embedding the corpus failed: ") + e.what());
  }
  if (vectors.size() != corpus.size()) {
    throw Error(ErrorCode::kBackend, "embedder returned " + std::to_string(vectors.size()) +
                                         " vectors for " + std::to_string(corpus.size()) +
                                         " tools");
  }
  index.dim_ = vectors.empty() ? 0 : vectors[0].dim();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].dim() != index.dim_) {
      throw Error(ErrorCode::kBackend, "dimension mismatch for tool '" + index.ids_[i] + "'");
    }
    // Normalize so search can use plain dot products.
    double norm = 0.0;
    for (float v : vectors[i].values) norm += static_cast<double>(v) * v;
    if (norm > 0.0) {
      float inv = static_cast<float>(1.0 / std::sqrt(norm));
      for (float& v : vectors[i].values) v *= inv;
    }
    index.vectors_.push_back(std::move(vectors[i].values));
  }
  return index;
}

RetrievalRun Index::search(const std::string& query, std::size_t k, Embedder& embedder) const {
  if (ids_.empty()) throw Error(ErrorCode::kInvalidArgument, "search on an empty index");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "search requires k >= 1");

  EmbeddingVector qvec = embedder.embed(query);
  if (qvec.dim() != dim_) {
    throw Error(ErrorCode::kBackend, "query embedding dim " + std::to_string(qvec.dim()) +
                                         " does not match index dim " + std::to_string(dim_));
  }
  double qnorm = 0.0;
  for (float v : qvec.values) qnorm += static_cast<double>(v) * v;
  qnorm = qnorm > 0.0 ? std::sqrt(qnorm) : 1.0;

  std::vector<std::pair<double, std::size_t>> scored;  // (-score, corpus pos)
  scored.reserve(ids_.size());
  for (std::size_t pos = 0; pos < vectors_.size(); ++pos) {
    double dot = 0.0;
    const std::vector<float>& row = vectors_[pos];
    for (std::size_t i = 0; i < row.size(); ++i) {
      dot += static_cast<double>(row[i]) * qvec.values[i];
    }
    scored.emplace_back(dot / qnorm, pos);
  }
  std::size_t take = std::min(k, scored.size());
  // Ties break toward earlier corpus positions.
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });

  RetrievalRun run;
  run.query_text = query;
  run.hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    run.hits.push_back({ids_[scored[i].second], scored[i].first, i + 1});
  }
  return run;
}

void Index::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write index file: " + path);

  nlohmann::json header;
  header["backend"] = backend_name_;
  header["dim"] = dim_;
  header["render_style"] = to_string(render_style_);
  header["corpus_hash"] = hex64(corpus_hash_);
  header["count"] = ids_.size();
  header["ids"] = ids_;
  const std::string header_text = header.dump();

  out << kIndexMagic << '\n' << header_text << '\n';
  for (const auto& row : vectors_) {
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

Index Index::load(const std::string& path, const ToolCorpus& corpus) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open index file: " + path);

  std::string magic, header_text;
  if (!std::getline(in, magic) || magic != kIndexMagic) {
    throw Error(ErrorCode::kParse, "not an index file: " + path);
  }
  if (!std::getline(in, header_text)) {
    throw Error(ErrorCode::kParse, "truncated index header: " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad index header: ") + e.what());
  }

  Index index;
  index.backend_name_ = header.at("backend").get<std::string>();
  index.dim_ = header.at("dim").get<std::size_t>();
  index.render_style_ = render_style_from_string(header.at("render_style").get<std::string>());
  index.ids_ = header.at("ids").get<std::vector<std::string>>();
  const std::string stored_hash = header.at("corpus_hash").get<std::string>();
  index.corpus_hash_ = corpus.content_hash();
  if (stored_hash != hex64(corpus.content_hash())) {
    throw Error(ErrorCode::kInvalidArgument,
                "index was built over a different corpus (hash " + stored_hash + " vs " +
                    hex64(corpus.content_hash()) + ")");
  }
  const std::size_t count = header.at("count").get<std::size_t>();
  if (count != corpus.size() || count != index.ids_.size()) {
    throw Error(ErrorCode::kParse, "index size does not match corpus: " + path);
  }

  index.vectors_.resize(count);
  for (std::size_t pos = 0; pos < count; ++pos) {
    index.vectors_[pos].resize(index.dim_);
    in.read(reinterpret_cast<char*>(index.vectors_[pos].data()),
            static_cast<std::streamsize>(index.dim_ * sizeof(float)));
    if (!in) throw Error(ErrorCode::kParse, "truncated index vectors: " + path);
  }
  return index;
}

RetrievalRun search_bm25(const ToolCorpus& corpus, const std::string& query, std::size_t k,
                         RenderStyle style, Bm25Params params) {
  if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "BM25 search on an empty corpus");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "search requires k >= 1");

  const std::size_t n = corpus.size();
  std::vector<std::unordered_map<std::string, std::size_t>> term_counts(n);
  std::vector<std::size_t> doc_lengths(n);
  double total_length = 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    auto tokens = tokenize_words(render_tool_doc(corpus.at(pos), style));
    doc_lengths[pos] = tokens.size();
    total_length += static_cast<double>(tokens.size());
    for (const auto& token : tokens) ++term_counts[pos][token];
  }
  const double avg_length = n > 0 ? total_length / static_cast<double>(n) : 0.0;

  std::vector<std::string> query_terms = tokenize_words(query);
  std::vector<double> scores(n, 0.0);
  for (const std::string& term : query_terms) {
    std::size_t df = 0;
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (term_counts[pos].count(term)) ++df;
    }
    if (df == 0) continue;
    // Lucene-style IDF, always positive.
    const double idf =
        std::log(1.0 + (static_cast<double>(n) - static_cast<double>(df) + 0.5) /
                           (static_cast<double>(df) + 0.5));
    for (std::size_t pos = 0; pos < n; ++pos) {
      auto it = term_counts[pos].find(term);
      if (it == term_counts[pos].end()) continue;
      const double tf = static_cast<double>(it->second);
      const double norm =
          params.k1 * (1.0 - params.b +
                       params.b * static_cast<double>(doc_lengths[pos]) / avg_length);
      scores[pos] += idf * (tf * (params.k1 + 1.0)) / (tf + norm);
    }
  }

  std::vector<std::size_t> order;
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (scores[pos] > 0.0) order.push_back(pos);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  if (order.size() > k) order.resize(k);

  RetrievalRun run;
  run.query_text = query;
  for (std::size_t i = 0; i < order.size(); ++i) {
    run.hits.push_back({corpus.at(order[i]).id, scores[order[i]], i + 1});
  }
  return run;
}

}  // namespace toolqp
