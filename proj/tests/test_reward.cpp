#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "toolqp/planner.hpp"
#include "toolqp/reward.hpp"

using namespace toolqp;

namespace {

Retriever toy_retriever() {
  auto embedder = std::make_shared<HashEmbedder>(128, 0);
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, *embedder, RenderStyle::kSchemaJson);
  return Retriever(std::move(index), embedder);
}

}  // namespace

TEST_CASE("baseline run with an empty plan equals the plain query search") {
  Retriever retriever = toy_retriever();
  RetrievalRun with_empty = baseline_run(retriever, "find hotel rooms", "", 5);
  RetrievalRun direct = retriever.search("find hotel rooms", 5);
  CHECK(with_empty == direct);
}

TEST_CASE("baseline run concatenates query and plan with a newline") {
  Retriever retriever = toy_retriever();
  RetrievalRun combined = baseline_run(retriever, "find hotel rooms", "look for lodging", 5);
  RetrievalRun direct = retriever.search("find hotel rooms\nlook for lodging", 5);
  CHECK(combined == direct);
  CHECK(baseline_run(retriever, "find hotel rooms", "look for lodging", 5) == combined);
  CHECK_THROWS_AS(baseline_run(retriever, "", "plan", 5), Error);
}

TEST_CASE("identical fused and baseline lists give zero deltas") {
  std::vector<std::string> ids = {"A", "B", "C"};
  auto [dn, dr] = retrieval_reward(ids, ids, {"A", "C"}, 5);
  CHECK(dn == 0.0);
  CHECK(dr == 0.0);
}

TEST_CASE("perfect fused against a targetless baseline gives (1, 1)") {
  std::vector<std::string> fused = {"A", "B"};
  std::vector<std::string> baseline = {"X", "Y", "Z"};
  auto [dn, dr] = retrieval_reward(fused, baseline, {"A", "B"}, 5);
  CHECK(dn == doctest::Approx(1.0));
  CHECK(dr == doctest::Approx(1.0));
}

TEST_CASE("retrieval reward is antisymmetric under swapping the lists") {
  std::mt19937 rng(17);
  std::vector<std::string> pool;
  for (int i = 0; i < 20; ++i) pool.push_back("t" + std::to_string(i));
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> fused(pool.begin(), pool.begin() + 8);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> baseline(pool.begin(), pool.begin() + 8);
    std::set<std::string> targets = {pool[0], pool[5]};

    auto [dn, dr] = retrieval_reward(fused, baseline, targets, 5);
    auto [dn_swapped, dr_swapped] = retrieval_reward(baseline, fused, targets, 5);
    CHECK(dn == doctest::Approx(-dn_swapped).epsilon(1e-15));
    CHECK(dr == doctest::Approx(-dr_swapped).epsilon(1e-15));

    // Double-entry: deltas equal the metric module's differences.
    CHECK(dn == doctest::Approx(ndcg_at_k(fused, targets, 5) - ndcg_at_k(baseline, targets, 5)));
    CHECK(dr ==
          doctest::Approx(recall_at_k(fused, targets, 5) - recall_at_k(baseline, targets, 5)));
  }
}

TEST_CASE("format reward over well-formed stop-terminated turns is (1, 1)") {
  std::vector<std::string> turns = {
      serialize_planner_action(PlanAction{"plan", {"g"}}),
      "a bare functional query",
      "<stop_retrieval>",
  };
  auto [fraction, stop] = format_reward(turns);
  CHECK(fraction == 1.0);
  CHECK(stop == 1);
}

TEST_CASE("three of four parseable turns under a turn cap give (0.75, 0)") {
  std::vector<std::string> turns = {
      serialize_planner_action(PlanAction{"plan", {"g"}}),
      "fine query",
      "<query>   </query>",  // empty after stripping: malformed
      "another fine query",  // cap ends the episode; no stop tag
  };
  auto [fraction, stop] = format_reward(turns);
  CHECK(fraction == doctest::Approx(0.75));
  CHECK(stop == 0);
}

TEST_CASE("a single malformed turn gives (0, 0)") {
  std::vector<std::string> turns = {"not a plan block at all"};
  auto [fraction, stop] = format_reward(turns);
  CHECK(fraction == 0.0);
  CHECK(stop == 0);
  CHECK_THROWS_AS(format_reward(std::vector<std::string>{}), Error);
}

TEST_CASE("plan similarity is cosine under the configured embedder") {
  HashEmbedder embedder(4096, 0);
  CHECK(plan_reward("identical plans match", "identical plans match", embedder) ==
        doctest::Approx(1.0).epsilon(1e-9));

  // Disjoint alphabets share no trigrams; only bucket collisions can leak a
  // little similarity, so the bound is loose but small.
  const double disjoint = plan_reward("aaa bbb ccc ddd", "xxx yyy zzz www", embedder);
  CHECK(std::abs(disjoint) < 0.05);
  CHECK(disjoint <
        plan_reward("aaa bbb ccc ddd", "aaa bbb something else", embedder));

  const double ab = plan_reward("hotel search plan", "stock chart plan", embedder);
  const double ba = plan_reward("stock chart plan", "hotel search plan", embedder);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK_THROWS_AS(plan_reward("", "x", embedder), Error);
}

TEST_CASE("total reward is the exact weighted sum") {
  RewardWeights weights;  // stock defaults
  RewardComponents maxed{1.0, 1.0, 1.0, 1, 1.0};
  RewardBreakdown breakdown = total_reward(maxed, weights);
  CHECK(breakdown.total == doctest::Approx(10.6).epsilon(1e-12));

  RewardComponents zero{};
  CHECK(total_reward(zero, weights).total == 0.0);

  std::mt19937 rng(5);
  auto uniform = [&] { return std::uniform_real_distribution<double>(-1, 1)(rng); };
  for (int trial = 0; trial < 200; ++trial) {
    RewardComponents components{uniform(), uniform(), std::abs(uniform()),
                                static_cast<int>(rng() % 2), uniform()};
    RewardBreakdown b = total_reward(components, weights);
    // Exact arithmetic identity, same expression shape.
    const double expected = weights.b1_n * components.delta_ndcg +
                            weights.b1_r * components.delta_recall +
                            weights.b2_f * components.format_fraction +
                            weights.b2_s * components.stop_flag +
                            weights.b3 * components.plan_similarity;
    CHECK(b.total == expected);

    // Linearity: doubling every weight doubles the total.
    RewardWeights doubled{weights.b1_n * 2, weights.b1_r * 2, weights.b2_f * 2, weights.b2_s * 2,
                          weights.b3 * 2};
    CHECK(total_reward(components, doubled).total == doctest::Approx(2.0 * b.total).epsilon(1e-12));

    // Computed bound with default weights and valid components.
    CHECK(b.total <= 10.6 + 1e-9);
    CHECK(b.total >= -(5.0 + 2.5 + 1.0) - 1e-9);
  }
}
