#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "toolqp/chat_client.hpp"
#include "toolqp/corpus.hpp"
#include "toolqp/retriever.hpp"

namespace toolqp {

struct PlanAction {
  std::string breakdown;
  std::vector<std::string> sub_goals;

  bool operator==(const PlanAction& other) const {
    return breakdown == other.breakdown && sub_goals == other.sub_goals;
  }
};

struct QueryAction {
  std::optional<std::string> sub_goal_tag;  // metadata only; never alters retrieval
  std::string text;

  bool operator==(const QueryAction& other) const {
    return sub_goal_tag == other.sub_goal_tag && text == other.text;
  }
};

struct StopAction {
  bool operator==(const StopAction&) const { return true; }
};

using PlannerAction = std::variant<PlanAction, QueryAction, StopAction>;

bool is_plan(const PlannerAction& action);
bool is_query(const PlannerAction& action);
bool is_stop(const PlannerAction& action);

// Parses one raw assistant turn. Turn 0 must carry a <task_breakdown> block
// followed by a <sub_goals> JSON list. Later turns are either the bare
// <stop_retrieval> tag or a query, optionally prefixed with a <sub_goal> tag
// and optionally wrapped in <query> tags; both observed formats are accepted
// and normalized.
PlannerAction parse_planner_turn(const std::string& raw, std::size_t turn_index);

// Canonical transcript serialization; inverse of parse_planner_turn for
// actions holding trimmed, tag-free text.
std::string serialize_planner_action(const PlannerAction& action);

// Renders the retrieval feedback shown to the planner after each query:
// a fixed header plus the top-k tools, one per line, in rank order.
std::string format_feedback(const RetrievalRun& run, const ToolCorpus& corpus, std::size_t k);

inline constexpr const char* kUserQueryPrefix = "User query: ";
inline constexpr const char* kBeginRetrievalPrompt = "Begin retrieval.";
inline constexpr const char* kStopTag = "<stop_retrieval>";

const std::string& default_system_prompt();

// What a planner sees when asked for its next action.
struct EpisodeView {
  std::string user_query;
  std::optional<PlanAction> plan;
  std::vector<std::pair<QueryAction, std::string>> turns;  // (query, feedback text)
};

// Builds the canonical chat transcript for an episode state. Shared by the
// remote planner and the SFT transcript writer.
std::vector<ChatMessage> build_transcript(const std::string& system_prompt,
                                          const EpisodeView& view);

// Single-episode state machine; the first action must be a Plan.
class Planner {
 public:
  virtual ~Planner() = default;
  virtual PlannerAction next_action(const EpisodeView& view) = 0;
};

// Deterministic test double that replays a fixed action sequence.
class ScriptedPlanner : public Planner {
 public:
  explicit ScriptedPlanner(std::vector<PlannerAction> script);

  PlannerAction next_action(const EpisodeView& view) override;

  std::size_t consumed() const { return cursor_; }
  std::size_t script_size() const { return script_.size(); }

 private:
  std::vector<PlannerAction> script_;
  std::size_t cursor_ = 0;
};

struct RemotePlannerConfig {
  ChatClientConfig chat;
  std::string system_prompt;  // empty -> default_system_prompt()
  int max_parse_retries = 2;  // re-asks on malformed replies
};

// Chat-model-backed planner; replies are parsed with parse_planner_turn and
// malformed ones re-requested up to the configured retry count.
class RemotePlanner : public Planner {
 public:
  explicit RemotePlanner(RemotePlannerConfig config);

  PlannerAction next_action(const EpisodeView& view) override;

 private:
  RemotePlannerConfig config_;
  ChatClient client_;
};

}  // namespace toolqp
