#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "test_util.hpp"
#include "toolqp/retriever.hpp"

using namespace toolqp;

namespace {

// Multiset trigram overlap, the independent signal the hash embedder is
// supposed to approximate.
std::size_t gram_overlap(const std::string& a, const std::string& b) {
  auto grams_a = HashEmbedder::extract_grams(a);
  auto grams_b = HashEmbedder::extract_grams(b);
  std::map<std::string, std::size_t> counts;
  for (const auto& gram : grams_a) ++counts[gram];
  std::size_t overlap = 0;
  for (const auto& gram : grams_b) {
    auto it = counts.find(gram);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return overlap;
}

ToolCorpus random_corpus(std::mt19937& rng, std::size_t n) {
  static const char* kWords[] = {"weather", "stock",   "hotel",  "flight", "email",
                                 "search",  "convert", "price",  "book",   "alarm",
                                 "token",   "account", "review", "chart",  "route"};
  std::vector<ToolDoc> tools;
  for (std::size_t i = 0; i < n; ++i) {
    std::string desc;
    const std::size_t words = 3 + rng() % 6;
    for (std::size_t w = 0; w < words; ++w) {
      if (!desc.empty()) desc += " ";
      desc += kWords[rng() % std::size(kWords)];
    }
    tools.push_back(tqtest::make_tool("tool_" + std::to_string(i), desc));
  }
  return ToolCorpus{std::move(tools)};
}

}  // namespace

TEST_CASE("hash embedding is deterministic") {
  HashEmbedder embedder(64, 0);
  auto a = embedder.embed_batch({"abc"});
  auto b = embedder.embed_batch({"abc"});
  CHECK(a[0].values == b[0].values);
}

TEST_CASE("identical texts have cosine 1") {
  HashEmbedder embedder(128, 3);
  auto vectors = embedder.embed_batch({"weather forecast", "weather forecast"});
  CHECK(cosine_similarity(vectors[0], vectors[1]) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("trigram overlap ordering carries over to cosine ordering") {
  HashEmbedder embedder(256, 0);
  const std::string query = "weather forecast api";
  const std::string near = "weather api";
  const std::string far = "stock prices";
  REQUIRE(gram_overlap(query, near) > gram_overlap(query, far));

  auto vectors = embedder.embed_batch({query, near, far});
  CHECK(cosine_similarity(vectors[0], vectors[1]) > cosine_similarity(vectors[0], vectors[2]));
}

TEST_CASE("dim below 8 is rejected") {
  CHECK_THROWS_AS(HashEmbedder(4, 0), Error);
}

TEST_CASE("index over one tool and exhaustive k") {
  auto embedder = std::make_shared<HashEmbedder>(64, 0);
  {
    std::vector<ToolDoc> one = {tqtest::make_tool("Solo", "the only tool")};
    ToolCorpus corpus{std::move(one)};
    Index index = Index::build(corpus, *embedder, RenderStyle::kSchemaJson);
    CHECK(index.size() == 1);
  }
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, *embedder, RenderStyle::kSchemaJson);
  RetrievalRun run = index.search("anything at all", 50, *embedder);
  CHECK(run.hits.size() == 50);
  for (std::size_t i = 0; i < run.hits.size(); ++i) CHECK(run.hits[i].rank == i + 1);
}

TEST_CASE("rebuilding the index reproduces bitwise-equal vectors") {
  HashEmbedder embedder(128, 9);
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index a = Index::build(toy, embedder, RenderStyle::kSchemaJson);
  Index b = Index::build(toy, embedder, RenderStyle::kSchemaJson);
  for (std::size_t pos = 0; pos < a.size(); ++pos) {
    CHECK(a.vector_at(pos) == b.vector_at(pos));
  }
}

TEST_CASE("a query equal to a rendered doc retrieves that tool first") {
  HashEmbedder embedder(256, 0);
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, embedder, RenderStyle::kSchemaJson);
  const std::string doc = render_tool_doc(*toy.find("BookHotel"), RenderStyle::kSchemaJson);
  RetrievalRun run = index.search(doc, 5, embedder);
  REQUIRE(!run.hits.empty());
  CHECK(run.hits[0].tool_id == "BookHotel");
}

TEST_CASE("k larger than the corpus returns everything") {
  HashEmbedder embedder(64, 0);
  std::mt19937 rng(5);
  ToolCorpus corpus = random_corpus(rng, 7);
  Index index = Index::build(corpus, embedder, RenderStyle::kNameDesc);
  RetrievalRun run = index.search("weather", 1000, embedder);
  CHECK(run.hits.size() == 7);
}

TEST_CASE("search equals an independent full cosine scan") {
  std::mt19937 rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    HashEmbedder embedder(64, trial);
    ToolCorpus corpus = random_corpus(rng, 20 + rng() % 180);
    Index index = Index::build(corpus, embedder, RenderStyle::kNameDesc);

    std::string query = "stock price chart for hotel booking";
    if (trial % 2) query = "weather alarm token";
    const std::size_t k = 1 + rng() % 10;
    RetrievalRun run = index.search(query, k, embedder);

    // Oracle: full scan over the stored vectors with an independent sort and
    // corpus-order tie resolution.
    EmbeddingVector qvec = embedder.embed(query);
    double qnorm = 0.0;
    for (float v : qvec.values) qnorm += static_cast<double>(v) * v;
    qnorm = qnorm > 0.0 ? std::sqrt(qnorm) : 1.0;
    std::vector<std::pair<double, std::size_t>> scores;
    for (std::size_t pos = 0; pos < corpus.size(); ++pos) {
      const std::vector<float>& row = index.vector_at(pos);
      double dot = 0.0;
      for (std::size_t d = 0; d < row.size(); ++d) {
        dot += static_cast<double>(row[d]) * qvec.values[d];
      }
      scores.emplace_back(dot / qnorm, pos);
    }
    std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    REQUIRE(run.hits.size() == std::min(k, corpus.size()));
    for (std::size_t i = 0; i < run.hits.size(); ++i) {
      CHECK(run.hits[i].tool_id == corpus.at(scores[i].second).id);
      CHECK(run.hits[i].score == scores[i].first);
    }
    // Contract: ranks contiguous, ids distinct, scores non-increasing.
    for (std::size_t i = 1; i < run.hits.size(); ++i) {
      CHECK(run.hits[i].rank == run.hits[i - 1].rank + 1);
      CHECK(run.hits[i].score <= run.hits[i - 1].score);
      CHECK(run.hits[i].tool_id != run.hits[i - 1].tool_id);
    }
  }
}

TEST_CASE("search is byte-stable across repeated calls") {
  HashEmbedder embedder(128, 0);
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, embedder, RenderStyle::kSchemaJson);
  RetrievalRun a = index.search("book a hotel with pool", 10, embedder);
  RetrievalRun b = index.search("book a hotel with pool", 10, embedder);
  CHECK(a == b);
}

TEST_CASE("empty corpus cannot be indexed and k=0 is rejected") {
  HashEmbedder embedder(64, 0);
  ToolCorpus empty;
  CHECK_THROWS_AS(Index::build(empty, embedder, RenderStyle::kSchemaJson), Error);

  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, embedder, RenderStyle::kSchemaJson);
  CHECK_THROWS_AS(index.search("x", 0, embedder), Error);
}

TEST_CASE("index cache round-trips and rejects a mismatched corpus") {
  tqtest::TempDir dir("index");
  HashEmbedder embedder(64, 1);
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, embedder, RenderStyle::kSchemaJson);
  index.save(dir.file("toy.idx"));

  Index loaded = Index::load(dir.file("toy.idx"), toy);
  CHECK(loaded.backend_name() == index.backend_name());
  RetrievalRun a = index.search("password change", 5, embedder);
  RetrievalRun b = loaded.search("password change", 5, embedder);
  CHECK(a == b);

  // A corpus with one mutated doc must be rejected by the provenance hash.
  std::vector<ToolDoc> mutated_tools(toy.tools().begin(), toy.tools().end());
  mutated_tools[0].description += " (edited)";
  ToolCorpus mutated{std::move(mutated_tools)};
  CHECK_THROWS_AS(Index::load(dir.file("toy.idx"), mutated), Error);

  // Truncated cache files are parse errors, not crashes.
  std::string bytes = tqtest::slurp(dir.file("toy.idx"));
  tqtest::spit(dir.file("cut.idx"), bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(Index::load(dir.file("cut.idx"), toy), Error);
}

TEST_CASE("bm25 ranks an exact unique name first") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  RetrievalRun run = search_bm25(toy, "EscrowRecoveryKey", 5);
  REQUIRE(!run.hits.empty());
  CHECK(run.hits[0].tool_id == "EscrowRecoveryKey");
}

TEST_CASE("bm25 score sanity against a hand-rolled oracle on a tiny corpus") {
  std::vector<ToolDoc> tools = {
      tqtest::make_tool("Apple", "apple apple banana"),
      tqtest::make_tool("Banana", "banana cherry"),
      tqtest::make_tool("Cherry", "cherry cherry cherry date"),
  };
  ToolCorpus corpus{std::move(tools)};
  RetrievalRun run = search_bm25(corpus, "banana", 3, RenderStyle::kNameDesc);

  // Oracle over name_desc token counts ("Apple: apple apple banana" etc).
  const double n = 3, df = 2, k1 = 1.2, b = 0.75;
  const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  auto score = [&](double tf, double len, double avg) {
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
  };
  const double avg = (4.0 + 3.0 + 5.0) / 3.0;
  const double apple_score = score(1.0, 4.0, avg);   // "banana" once in 4 tokens
  const double banana_score = score(2.0, 3.0, avg);  // name + description hit

  REQUIRE(run.hits.size() == 2);  // Cherry never matches
  CHECK(run.hits[0].tool_id == "Banana");
  CHECK(run.hits[0].score == doctest::Approx(banana_score).epsilon(1e-12));
  CHECK(run.hits[1].score == doctest::Approx(apple_score).epsilon(1e-12));
}

TEST_CASE("bm25 with no matching token returns an empty run") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  RetrievalRun run = search_bm25(toy, "zzzz qqqq xyzzy", 10);
  CHECK(run.hits.empty());
}

TEST_CASE("bm25 scores are non-increasing for random queries") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  const char* queries[] = {"password account token", "hotel flight city date",
                           "stock price history", "email calendar reminder"};
  for (const char* query : queries) {
    RetrievalRun run = search_bm25(toy, query, 50);
    for (std::size_t i = 1; i < run.hits.size(); ++i) {
      CHECK(run.hits[i].score <= run.hits[i - 1].score);
    }
  }
}
