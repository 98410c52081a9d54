#include <doctest.h>

#include <chrono>

#include "test_util.hpp"
#include "toolqp/engine.hpp"

using namespace toolqp;

namespace {

EngineConfig fixture_config(const tqtest::TempDir& dir) {
  EngineConfig config;
  config.corpus_path = tqtest::fixture("toy_corpus.jsonl");
  config.index_cache = dir.file("toy.idx");
  config.embedder.dim = 128;
  config.planner.script_path = tqtest::fixture("scripted_planner.json");
  config.seed = 42;
  config.embedder.seed = 42;
  config.synthesis.seed = 42;
  return config;
}

}  // namespace

TEST_CASE("defaults carry the standard pipeline constants") {
  EngineConfig config = EngineConfig::from_json(nlohmann::json::object());
  CHECK(config.episode.feedback_k == 5);
  CHECK(config.episode.max_turns == 10);
  CHECK(config.episode.include_user_query_run);
  CHECK(config.synthesis.rank_threshold == 5);
  CHECK(config.synthesis.p_keep_failed == doctest::Approx(0.4));
  CHECK(config.synthesis.max_escalations == 5);
  CHECK(config.synthesis.candidates_per_attempt == 5);
  CHECK(config.metrics.k == 10);
  CHECK(config.reward.k == 5);
  CHECK(config.reward.weights.b1_n == 5.0);
  CHECK(config.reward.weights.b1_r == 2.5);
  CHECK(config.reward.weights.b2_f == 1.5);
  CHECK(config.reward.weights.b2_s == 0.6);
  CHECK(config.reward.weights.b3 == 1.0);
  CHECK(config.aggregation.method == FusionMethod::kPeakRank);
  CHECK(config.aggregation.rrf_c == 60.0);
}

TEST_CASE("config json round-trips through from_json") {
  EngineConfig config = EngineConfig::from_json(nlohmann::json::parse(R"({
    "seed": 9,
    "episode": {"max_turns": 3},
    "aggregation": {"method": "rrf", "rrf_c": 10.0},
    "reward": {"weights": {"b1_n": 2.0}}
  })"));
  CHECK(config.seed == 9);
  CHECK(config.embedder.seed == 9);  // master seed flows down
  CHECK(config.episode.max_turns == 3);
  CHECK(config.aggregation.method == FusionMethod::kRrf);
  CHECK(config.reward.weights.b1_n == 2.0);
  CHECK(config.reward.weights.b1_r == 2.5);  // untouched default

  EngineConfig again = EngineConfig::from_json(config.to_json());
  CHECK(again.to_json() == config.to_json());
}

TEST_CASE("scripted planner files parse into actions") {
  auto actions = parse_scripted_actions(nlohmann::json::parse(R"([
    {"plan": {"breakdown": "b", "sub_goals": ["g1", "g2"]}},
    {"query": "find things", "sub_goal": "g1"},
    {"stop": true}
  ])"));
  REQUIRE(actions.size() == 3);
  CHECK(is_plan(actions[0]));
  CHECK(std::get<QueryAction>(actions[1]).sub_goal_tag == "g1");
  CHECK(is_stop(actions[2]));
  CHECK_THROWS_AS(parse_scripted_actions(nlohmann::json::parse(R"([{"bogus": 1}])")), Error);
}

TEST_CASE("cmd_index builds, hits the cache, and survives corruption") {
  tqtest::TempDir dir("engine");
  EngineConfig config = fixture_config(dir);

  const auto start = std::chrono::steady_clock::now();
  CommandOutcome first = cmd_index(config);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 5.0);
  CHECK(first.exit_code() == 0);
  REQUIRE(!first.messages.empty());
  CHECK(first.messages.back().find("index written") != std::string::npos);

  CommandOutcome second = cmd_index(config);
  CHECK(second.messages.back().find("cache hit") != std::string::npos);

  // Corrupt the cache: the command warns and rebuilds.
  std::string bytes = tqtest::slurp(dir.file("toy.idx"));
  tqtest::spit(dir.file("toy.idx"), bytes.substr(0, bytes.size() / 3));
  CommandOutcome third = cmd_index(config);
  CHECK(third.exit_code() == 0);
  bool warned = false;
  for (const std::string& message : third.messages) {
    if (message.find("rebuilding") != std::string::npos) warned = true;
  }
  CHECK(warned);

  // A different backend setting also rebuilds rather than reusing.
  EngineConfig other = config;
  other.embedder.seed = 7;
  CommandOutcome fourth = cmd_index(other);
  CHECK(fourth.exit_code() == 0);
  CHECK(fourth.messages.back().find("index written") != std::string::npos);
}

TEST_CASE("cmd_retrieve is deterministic and honors flags") {
  tqtest::TempDir dir("engine");
  EngineConfig config = fixture_config(dir);

  CommandOutcome first =
      cmd_retrieve(config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run1"));
  CHECK(first.exit_code() == 0);
  CHECK(first.succeeded == 10);

  CommandOutcome second =
      cmd_retrieve(config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run2"));
  CHECK(second.exit_code() == 0);
  CHECK(tqtest::slurp(dir.file("run1") + "/trajectories.jsonl") ==
        tqtest::slurp(dir.file("run2") + "/trajectories.jsonl"));
  CHECK(tqtest::slurp(dir.file("run1") + "/fused.jsonl") ==
        tqtest::slurp(dir.file("run2") + "/fused.jsonl"));

  SUBCASE("aggregation flag switches the method field") {
    EngineConfig rrf_config = config;
    rrf_config.aggregation.method = FusionMethod::kRrf;
    cmd_retrieve(rrf_config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run_rrf"));
    const std::string fused = tqtest::slurp(dir.file("run_rrf") + "/fused.jsonl");
    CHECK(fused.find("\"method\":\"rrf\"") != std::string::npos);
  }

  SUBCASE("max_turns caps the recorded turns") {
    EngineConfig capped = config;
    capped.episode.max_turns = 1;
    cmd_retrieve(capped, tqtest::fixture("eval_records.jsonl"), "", dir.file("run_cap"));
    for (const Trajectory& trajectory :
         read_trajectories(dir.file("run_cap") + "/trajectories.jsonl")) {
      CHECK(trajectory.turns.size() <= 1);
      CHECK(trajectory.stopped == StopReason::kTurnCap);
    }
  }

  SUBCASE("parallel fan-out preserves output order and bytes") {
    EngineConfig parallel = config;
    parallel.parallel = 4;
    cmd_retrieve(parallel, tqtest::fixture("eval_records.jsonl"), "", dir.file("run_par"));
    CHECK(tqtest::slurp(dir.file("run_par") + "/fused.jsonl") ==
          tqtest::slurp(dir.file("run1") + "/fused.jsonl"));
  }
}

TEST_CASE("per-record failures map to the partial and total exit codes") {
  tqtest::TempDir dir("engine");
  EngineConfig config = fixture_config(dir);

  // A script covering only q01: the other nine records fail per-record.
  auto full_script = nlohmann::json::parse(tqtest::slurp(tqtest::fixture("scripted_planner.json")));
  nlohmann::json partial_script;
  partial_script["per_query"]["q01"] = full_script["per_query"]["q01"];
  tqtest::spit(dir.file("partial.json"), partial_script.dump());
  config.planner.script_path = dir.file("partial.json");

  CommandOutcome partial =
      cmd_retrieve(config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run"));
  CHECK(partial.succeeded == 1);
  CHECK(partial.failed == 9);
  CHECK(partial.exit_code() == 1);

  // No record covered at all: everything fails.
  nlohmann::json empty_script;
  empty_script["per_query"] = nlohmann::json::object();
  tqtest::spit(dir.file("empty.json"), empty_script.dump());
  config.planner.script_path = dir.file("empty.json");
  CommandOutcome total =
      cmd_retrieve(config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run2"));
  CHECK(total.succeeded == 0);
  CHECK(total.exit_code() == 2);
}

TEST_CASE("cmd_eval reproduces hand-scored fixtures") {
  tqtest::TempDir dir("engine");
  EngineConfig config = fixture_config(dir);
  cmd_retrieve(config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run"));

  CommandOutcome outcome = cmd_eval(config, dir.file("run") + "/fused.jsonl",
                                    tqtest::fixture("eval_records.jsonl"), dir.file("eval"));
  CHECK(outcome.exit_code() == 0);

  const std::string report = tqtest::slurp(dir.file("eval") + "/report.tsv");
  CHECK(report.find("row_type\tkey\tK") == 0);
  // All ten compositional fixtures retrieve every target within K=10.
  CHECK(report.find("category\tCustom\t10\t") != std::string::npos);
  auto json_report = nlohmann::json::parse(tqtest::slurp(dir.file("eval") + "/report.json"));
  CHECK(json_report["K"] == 10);
  CHECK(json_report["categories"]["Custom"]["recall"].get<double>() == doctest::Approx(1.0));
  CHECK(json_report["categories"]["Custom"]["completeness"].get<double>() ==
        doctest::Approx(1.0));

  SUBCASE("the K flag changes the report header") {
    EngineConfig k5 = config;
    k5.metrics.k = 5;
    cmd_eval(k5, dir.file("run") + "/fused.jsonl", tqtest::fixture("eval_records.jsonl"),
             dir.file("eval5"));
    auto report5 = nlohmann::json::parse(tqtest::slurp(dir.file("eval5") + "/report.json"));
    CHECK(report5["K"] == 5);
  }

  SUBCASE("a dataset without a category mapping is an error") {
    tqtest::spit(dir.file("odd.jsonl"),
                 R"({"query_id": "x1", "query": "whatever", "target_tool_ids": ["SendEmail"], "dataset": "unmapped"})"
                 "\n");
    tqtest::spit(dir.file("odd_fused.jsonl"),
                 R"({"query_id": "x1", "method": "peak_rank", "hits": [{"id": "SendEmail", "score": -1.0, "source_count": 1}]})"
                 "\n");
    CHECK_THROWS_AS(
        cmd_eval(config, dir.file("odd_fused.jsonl"), dir.file("odd.jsonl"), dir.file("evalx")),
        Error);
  }
}

TEST_CASE("cmd_synthesize produces parseable transcripts and a seedable audit") {
  tqtest::TempDir dir("engine");
  EngineConfig config = fixture_config(dir);

  CommandOutcome outcome =
      cmd_synthesize(config, tqtest::fixture("synthesis_records.jsonl"), dir.file("sft"));
  CHECK(outcome.exit_code() == 0);
  CHECK(outcome.succeeded >= 8);

  const std::string audit = tqtest::slurp(dir.file("sft") + "/audit.tsv");
  CHECK(audit.find("record_id\tsub_task\tlevel_reached") == 0);

  // Different seed: same success/level columns, possibly different kept flags.
  EngineConfig reseeded = config;
  reseeded.synthesis.seed = 4242;
  cmd_synthesize(reseeded, tqtest::fixture("synthesis_records.jsonl"), dir.file("sft2"));
  const std::string audit2 = tqtest::slurp(dir.file("sft2") + "/audit.tsv");

  auto strip_kept = [](const std::string& text) {
    std::string out;
    for (const std::string& line : [&] {
           std::vector<std::string> lines;
           std::string current;
           for (char c : text) {
             if (c == '\n') {
               lines.push_back(current);
               current.clear();
             } else {
               current.push_back(c);
             }
           }
           return lines;
         }()) {
      const std::size_t cut = line.rfind('\t');
      out += line.substr(0, cut) + "\n";
    }
    return out;
  };
  CHECK(strip_kept(audit) == strip_kept(audit2));

  SUBCASE("empty input yields empty outputs and a clean exit") {
    tqtest::spit(dir.file("none.jsonl"), "");
    CommandOutcome empty = cmd_synthesize(config, dir.file("none.jsonl"), dir.file("sft_empty"));
    CHECK(empty.exit_code() == 0);
    CHECK(tqtest::slurp(dir.file("sft_empty") + "/sft.jsonl").empty());
  }
}

TEST_CASE("cmd_reward writes audit rows satisfying the breakdown identity") {
  tqtest::TempDir dir("engine");
  EngineConfig config = fixture_config(dir);
  cmd_retrieve(config, tqtest::fixture("eval_records.jsonl"), "", dir.file("run"));

  CommandOutcome outcome =
      cmd_reward(config, dir.file("run") + "/trajectories.jsonl",
                 tqtest::fixture("eval_records.jsonl"), dir.file("rewards"));
  CHECK(outcome.exit_code() == 0);
  CHECK(outcome.succeeded == 10);

  std::ifstream in(dir.file("rewards") + "/rewards.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    auto node = nlohmann::json::parse(line);
    const double total = node["total"].get<double>();
    const double expected = 5.0 * node["delta_ndcg"].get<double>() +
                            2.5 * node["delta_recall"].get<double>() +
                            1.5 * node["format_fraction"].get<double>() +
                            0.6 * node["stop_flag"].get<int>() +
                            1.0 * node["plan_similarity"].get<double>();
    CHECK(total == expected);
    // Scripted planner transcripts are fully well-formed and stop-terminated.
    CHECK(node["format_fraction"].get<double>() == 1.0);
    CHECK(node["stop_flag"].get<int>() == 1);
  }
  CHECK(rows == 10);
}
