#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "toolqp/corpus.hpp"
#include "toolqp/planner.hpp"
#include "toolqp/retriever.hpp"

namespace toolqp {

struct EpisodeConfig {
  std::size_t feedback_k = 5;
  std::size_t max_turns = 10;
  bool include_user_query_run = true;  // anchor run with the raw user query
};

enum class StopReason { kExplicitStop, kTurnCap, kAborted };

std::string to_string(StopReason reason);
StopReason stop_reason_from_string(std::string_view name);

struct EpisodeTurn {
  QueryAction action;
  RetrievalRun run;
  std::string feedback_text;
};

// One episode's record: plan, query-retrieval turns, stop marker, and the
// optional anchor run (executed with the raw user query, never shown to the
// planner).
struct Trajectory {
  std::string user_query;
  EpisodeConfig config;
  std::uint64_t corpus_hash = 0;
  std::string backend_name;
  PlanAction plan;
  std::vector<EpisodeTurn> turns;
  StopReason stopped = StopReason::kExplicitStop;
  std::optional<RetrievalRun> anchor_run;
  std::string abort_reason;  // set only when stopped == kAborted
};

// Runs one planner against one retriever for one user query. The planner's
// first action must be a Plan (protocol error otherwise). Planner failures
// mid-episode yield a trajectory marked aborted with the partial state kept.
Trajectory run_episode(Planner& planner, const Retriever& retriever, const ToolCorpus& corpus,
                       const std::string& user_query, const EpisodeConfig& config);

struct ReplayReport {
  bool provenance_match = false;
  std::vector<bool> turn_matches;
  bool anchor_match = true;

  bool all_equal() const;
};

// Re-executes every stored query and reports per-turn equality. With
// `strict_provenance` a corpus-hash mismatch is an error; without it the
// replay proceeds and differences show up as unequal turns.
ReplayReport replay_trajectory(const Trajectory& trajectory, const Retriever& retriever,
                               bool strict_provenance = true);

std::string serialize_trajectory(const Trajectory& trajectory);
Trajectory parse_trajectory(const std::string& line);

void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_trajectories(const std::string& path);

}  // namespace toolqp
