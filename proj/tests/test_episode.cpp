#include <doctest.h>

#include "test_util.hpp"
#include "toolqp/episode.hpp"

using namespace toolqp;

namespace {

Retriever toy_retriever(std::uint64_t seed = 0) {
  auto embedder = std::make_shared<HashEmbedder>(128, seed);
  ToolCorpus toy = tqtest::load_toy_corpus();
  Index index = Index::build(toy, *embedder, RenderStyle::kSchemaJson);
  return Retriever(std::move(index), embedder);
}

PlanAction toy_plan() { return PlanAction{"look things up step by step", {"step one"}}; }

// Planner stubs for protocol and failure paths.
class QueryFirstPlanner : public Planner {
 public:
  PlannerAction next_action(const EpisodeView&) override {
    return QueryAction{std::nullopt, "query before plan"};
  }
};

class ThrowingPlanner : public Planner {
 public:
  PlannerAction next_action(const EpisodeView& view) override {
    if (!view.plan) return toy_plan();
    if (view.turns.empty()) return QueryAction{std::nullopt, "first query"};
    throw Error(ErrorCode::kBackend, "simulated transport failure");
  }
};

}  // namespace

TEST_CASE("degenerate script yields zero turns with an anchor run") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), StopAction{}});
  Trajectory trajectory = run_episode(planner, retriever, toy, "change my password", {});

  CHECK(trajectory.turns.empty());
  CHECK(trajectory.stopped == StopReason::kExplicitStop);
  REQUIRE(trajectory.anchor_run.has_value());
  CHECK(trajectory.anchor_run->hits.size() == 5);
  CHECK(trajectory.plan.breakdown == "look things up step by step");
}

TEST_CASE("turns record runs and feedback that match direct calls") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), QueryAction{std::nullopt, "password change tool"},
                           QueryAction{std::string("hotels"), "hotel rooms by region"},
                           StopAction{}});
  EpisodeConfig config;
  config.feedback_k = 5;
  Trajectory trajectory = run_episode(planner, retriever, toy, "do things", config);

  REQUIRE(trajectory.turns.size() == 2);
  CHECK(trajectory.stopped == StopReason::kExplicitStop);
  for (const EpisodeTurn& turn : trajectory.turns) {
    CHECK(turn.run.hits.size() <= 5);
    RetrievalRun direct = retriever.search(turn.action.text, 5);
    CHECK(turn.run == direct);
    CHECK(turn.feedback_text == format_feedback(direct, toy, 5));
  }
  CHECK(trajectory.turns[1].action.sub_goal_tag == "hotels");
}

TEST_CASE("fifteen queries under a ten-turn cap stop at exactly ten") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  std::vector<PlannerAction> script;
  script.push_back(toy_plan());
  for (int i = 0; i < 15; ++i) {
    script.push_back(QueryAction{std::nullopt, "query number " + std::to_string(i)});
  }
  script.push_back(StopAction{});
  ScriptedPlanner planner(std::move(script));

  EpisodeConfig config;
  config.max_turns = 10;
  Trajectory trajectory = run_episode(planner, retriever, toy, "busy planner", config);
  CHECK(trajectory.turns.size() == 10);
  CHECK(trajectory.stopped == StopReason::kTurnCap);
}

TEST_CASE("same script and seed produce byte-identical serializations") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever(7);
  auto run_once = [&] {
    ScriptedPlanner planner({toy_plan(), QueryAction{std::nullopt, "stock volatility"},
                             StopAction{}});
    return serialize_trajectory(run_episode(planner, retriever, toy, "check my stocks", {}));
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("anchor run can be disabled") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), StopAction{}});
  EpisodeConfig config;
  config.include_user_query_run = false;
  Trajectory trajectory = run_episode(planner, retriever, toy, "whatever", config);
  CHECK_FALSE(trajectory.anchor_run.has_value());
}

TEST_CASE("a plan-less first action is a protocol error") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  QueryFirstPlanner planner;
  CHECK_THROWS_AS(run_episode(planner, retriever, toy, "q", {}), Error);
}

TEST_CASE("planner failures abort with the partial trajectory kept") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ThrowingPlanner planner;
  Trajectory trajectory = run_episode(planner, retriever, toy, "q", {});
  CHECK(trajectory.stopped == StopReason::kAborted);
  CHECK(trajectory.turns.size() == 1);  // the successful first query survives
  CHECK(trajectory.abort_reason.find("transport failure") != std::string::npos);
}

TEST_CASE("replay on an unchanged index matches every turn") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), QueryAction{std::nullopt, "book flights"},
                           QueryAction{std::nullopt, "daily stock prices"}, StopAction{}});
  Trajectory trajectory = run_episode(planner, retriever, toy, "travel and money", {});

  ReplayReport report = replay_trajectory(trajectory, retriever);
  CHECK(report.all_equal());
  CHECK(report.turn_matches.size() == 2);
}

TEST_CASE("replay flags turns affected by a corpus mutation") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), QueryAction{std::nullopt, "current stock price symbol"},
                           StopAction{}});
  Trajectory trajectory = run_episode(planner, retriever, toy, "stocks", {});

  // Mutate the top-ranked tool's description and rebuild.
  REQUIRE(!trajectory.turns.empty());
  const std::string top_id = trajectory.turns[0].run.hits.at(0).tool_id;
  std::vector<ToolDoc> tools(toy.tools().begin(), toy.tools().end());
  for (ToolDoc& tool : tools) {
    if (tool.id == top_id) tool.description = "entirely unrelated text now";
  }
  ToolCorpus mutated{std::move(tools)};
  auto embedder = std::make_shared<HashEmbedder>(128, 0);
  Retriever changed(Index::build(mutated, *embedder, RenderStyle::kSchemaJson), embedder);

  CHECK_THROWS_AS(replay_trajectory(trajectory, changed, /*strict_provenance=*/true), Error);
  ReplayReport report = replay_trajectory(trajectory, changed, /*strict_provenance=*/false);
  CHECK_FALSE(report.provenance_match);
  CHECK_FALSE(report.turn_matches.at(0));
}

TEST_CASE("empty-turn trajectories replay trivially") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), StopAction{}});
  Trajectory trajectory = run_episode(planner, retriever, toy, "noop", {});
  ReplayReport report = replay_trajectory(trajectory, retriever);
  CHECK(report.all_equal());
  CHECK(report.turn_matches.empty());
}

TEST_CASE("trajectory serialization round-trips") {
  ToolCorpus toy = tqtest::load_toy_corpus();
  Retriever retriever = toy_retriever();
  ScriptedPlanner planner({toy_plan(), QueryAction{std::string("tag"), "tagged query"},
                           StopAction{}});
  Trajectory trajectory = run_episode(planner, retriever, toy, "round trip", {});

  Trajectory parsed = parse_trajectory(serialize_trajectory(trajectory));
  CHECK(serialize_trajectory(parsed) == serialize_trajectory(trajectory));
  CHECK(parsed.turns.size() == trajectory.turns.size());
  CHECK(parsed.corpus_hash == trajectory.corpus_hash);
  CHECK(parsed.turns[0].action.sub_goal_tag == trajectory.turns[0].action.sub_goal_tag);

  tqtest::TempDir dir("traj");
  write_trajectories(dir.file("t.jsonl"), {trajectory, trajectory});
  auto loaded = read_trajectories(dir.file("t.jsonl"));
  CHECK(loaded.size() == 2);
  CHECK(serialize_trajectory(loaded[1]) == serialize_trajectory(trajectory));
}
