#include "toolqp/episode.hpp"

#include <fstream>

#include <json.hpp>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json run_to_json(const RetrievalRun& run) {
  ordered_json node = ordered_json::object();
  node["query"] = run.query_text;
  auto& hits = node["hits"] = ordered_json::array();
  for (const RetrievalHit& hit : run.hits) {
    hits.push_back({{"id", hit.tool_id}, {"score", hit.score}, {"rank", hit.rank}});
  }
  return node;
}

RetrievalRun run_from_json(const ordered_json& node) {
  RetrievalRun run;
  run.query_text = node.at("query").get<std::string>();
  for (const auto& hit : node.at("hits")) {
    run.hits.push_back({hit.at("id").get<std::string>(), hit.at("score").get<double>(),
                        hit.at("rank").get<std::size_t>()});
  }
  return run;
}

}  // namespace

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kExplicitStop: return "explicit_stop";
    case StopReason::kTurnCap: return "turn_cap";
    case StopReason::kAborted: return "aborted";
  }
  return "explicit_stop";
}

StopReason stop_reason_from_string(std::string_view name) {
  if (name == "explicit_stop") return StopReason::kExplicitStop;
  if (name == "turn_cap") return StopReason::kTurnCap;
  if (name == "aborted") return StopReason::kAborted;
  throw Error(ErrorCode::kParse, "unknown stop reason: " + std::string(name));
}

Trajectory run_episode(Planner& planner, const Retriever& retriever, const ToolCorpus& corpus,
                       const std::string& user_query, const EpisodeConfig& config) {
  if (config.feedback_k == 0 || config.max_turns == 0) {
    throw Error(ErrorCode::kInvalidArgument, "feedback_k and max_turns must be >= 1");
  }

  Trajectory trajectory;
  trajectory.user_query = user_query;
  trajectory.config = config;
  trajectory.corpus_hash = retriever.index().corpus_hash();
  trajectory.backend_name = retriever.index().backend_name();

  if (config.include_user_query_run) {
    trajectory.anchor_run = retriever.search(user_query, config.feedback_k);
  }

  EpisodeView view;
  view.user_query = user_query;

  auto abort_with = [&](const std::string& reason) {
    trajectory.stopped = StopReason::kAborted;
    trajectory.abort_reason = reason;
    return trajectory;
  };

  PlannerAction first;
  try {
    first = planner.next_action(view);
  } catch (const Error& e) {
    return abort_with(e.what());
  }
  if (!is_plan(first)) {
    throw Error(ErrorCode::kProtocol, "planner's first action must be a Plan");
  }
  trajectory.plan = std::get<PlanAction>(first);
  view.plan = trajectory.plan;

  while (trajectory.turns.size() < config.max_turns) {
    PlannerAction action;
    try {
      action = planner.next_action(view);
    } catch (const Error& e) {
      return abort_with(e.what());
    }
    if (is_stop(action)) {
      trajectory.stopped = StopReason::kExplicitStop;
      return trajectory;
    }
    if (is_plan(action)) {
      throw Error(ErrorCode::kProtocol, "planner emitted a Plan after the first turn");
    }
    QueryAction query = std::get<QueryAction>(action);
    RetrievalRun run = retriever.search(query.text, config.feedback_k);
    std::string feedback = format_feedback(run, corpus, config.feedback_k);
    view.turns.emplace_back(query, feedback);
    trajectory.turns.push_back({std::move(query), std::move(run), std::move(feedback)});
  }
  trajectory.stopped = StopReason::kTurnCap;
  return trajectory;
}

bool ReplayReport::all_equal() const {
  if (!provenance_match || !anchor_match) return false;
  for (bool match : turn_matches) {
    if (!match) return false;
  }
  return true;
}

ReplayReport replay_trajectory(const Trajectory& trajectory, const Retriever& retriever,
                               bool strict_provenance) {
  ReplayReport report;
  report.provenance_match = trajectory.corpus_hash == retriever.index().corpus_hash() &&
                            trajectory.backend_name == retriever.index().backend_name();
  if (strict_provenance && !report.provenance_match) {
    throw Error(ErrorCode::kInvalidArgument,
                "trajectory provenance does not match the index (corpus hash or backend)");
  }
  for (const EpisodeTurn& turn : trajectory.turns) {
    RetrievalRun rerun = retriever.search(turn.action.text, trajectory.config.feedback_k);
    report.turn_matches.push_back(rerun == turn.run);
  }
  if (trajectory.anchor_run) {
    RetrievalRun rerun = retriever.search(trajectory.user_query, trajectory.config.feedback_k);
    report.anchor_match = rerun == *trajectory.anchor_run;
  }
  return report;
}

std::string serialize_trajectory(const Trajectory& trajectory) {
  ordered_json node = ordered_json::object();
  node["user_query"] = trajectory.user_query;
  node["config"] = {{"feedback_k", trajectory.config.feedback_k},
                    {"max_turns", trajectory.config.max_turns},
                    {"include_user_query_run", trajectory.config.include_user_query_run}};
  node["corpus_hash"] = hex64(trajectory.corpus_hash);
  node["backend"] = trajectory.backend_name;
  node["plan"] = {{"breakdown", trajectory.plan.breakdown},
                  {"sub_goals", trajectory.plan.sub_goals}};
  auto& turns = node["turns"] = ordered_json::array();
  for (const EpisodeTurn& turn : trajectory.turns) {
    ordered_json t = ordered_json::object();
    if (turn.action.sub_goal_tag) t["sub_goal"] = *turn.action.sub_goal_tag;
    t["query"] = turn.action.text;
    t["run"] = run_to_json(turn.run);
    t["feedback"] = turn.feedback_text;
    turns.push_back(std::move(t));
  }
  node["stop_reason"] = to_string(trajectory.stopped);
  if (trajectory.stopped == StopReason::kAborted) {
    node["abort_reason"] = trajectory.abort_reason;
  }
  if (trajectory.anchor_run) {
    node["anchor"] = run_to_json(*trajectory.anchor_run);
  }
  return node.dump();
}

Trajectory parse_trajectory(const std::string& line) {
  ordered_json node;
  try {
    node = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, std::string("malformed trajectory line: ") + e.what());
  }
  Trajectory trajectory;
  trajectory.user_query = node.at("user_query").get<std::string>();
  const auto& config = node.at("config");
  trajectory.config.feedback_k = config.at("feedback_k").get<std::size_t>();
  trajectory.config.max_turns = config.at("max_turns").get<std::size_t>();
  trajectory.config.include_user_query_run = config.at("include_user_query_run").get<bool>();
  trajectory.corpus_hash = std::stoull(node.at("corpus_hash").get<std::string>(), nullptr, 16);
  trajectory.backend_name = node.at("backend").get<std::string>();
  trajectory.plan.breakdown = node.at("plan").at("breakdown").get<std::string>();
  trajectory.plan.sub_goals = node.at("plan").at("sub_goals").get<std::vector<std::string>>();
  for (const auto& t : node.at("turns")) {
    EpisodeTurn turn;
    if (t.contains("sub_goal")) turn.action.sub_goal_tag = t.at("sub_goal").get<std::string>();
    turn.action.text = t.at("query").get<std::string>();
    turn.run = run_from_json(t.at("run"));
    turn.feedback_text = t.at("feedback").get<std::string>();
    trajectory.turns.push_back(std::move(turn));
  }
  trajectory.stopped = stop_reason_from_string(node.at("stop_reason").get<std::string>());
  if (node.contains("abort_reason")) {
    trajectory.abort_reason = node.at("abort_reason").get<std::string>();
  }
  if (node.contains("anchor")) {
    trajectory.anchor_run = run_from_json(node.at("anchor"));
  }
  return trajectory;
}

void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write trajectory file: " + path);
  for (const Trajectory& trajectory : trajectories) {
    out << serialize_trajectory(trajectory) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open trajectory file: " + path);
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    out.push_back(parse_trajectory(line));
  }
  return out;
}

}  // namespace toolqp
