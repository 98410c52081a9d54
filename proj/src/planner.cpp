#include "toolqp/planner.hpp"

#include <json.hpp>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

// Returns the content of the first <tag>...</tag> block, or nullopt.
struct Block {
  std::string content;
  std::size_t begin;  // offset of the opening tag
  std::size_t end;    // offset one past the closing tag
};

std::optional<Block> find_block(const std::string& text, const std::string& tag) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  std::size_t begin = text.find(open);
  if (begin == std::string::npos) return std::nullopt;
  std::size_t body = begin + open.size();
  std::size_t end = text.find(close, body);
  if (end == std::string::npos) return std::nullopt;
  return Block{text.substr(body, end - body), begin, end + close.size()};
}

PlannerAction parse_plan_turn(const std::string& raw) {
  auto breakdown = find_block(raw, "task_breakdown");
  if (!breakdown) {
    throw Error(ErrorCode::kParse, "plan turn is missing the <task_breakdown> block");
  }
  auto goals = find_block(raw, "sub_goals");
  if (!goals || goals->begin < breakdown->end) {
    throw Error(ErrorCode::kParse, "plan turn is missing the <sub_goals> block");
  }
  nlohmann::json list;
  try {
    list = nlohmann::json::parse(goals->content);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, std::string("<sub_goals> body is not a JSON list: ") + e.what());
  }
  if (!list.is_array() || list.empty()) {
    throw Error(ErrorCode::kParse, "<sub_goals> must be a non-empty JSON list of strings");
  }
  PlanAction plan;
  plan.breakdown = std::string(trim(breakdown->content));
  for (const auto& item : list) {
    if (!item.is_string()) {
      throw Error(ErrorCode::kParse, "<sub_goals> must contain strings only");
    }
    plan.sub_goals.push_back(item.get<std::string>());
  }
  return plan;
}

PlannerAction parse_query_turn(const std::string& raw) {
  std::string text(trim(raw));
  QueryAction query;

  if (auto tag = find_block(text, "sub_goal"); tag && tag->begin == 0) {
    query.sub_goal_tag = std::string(trim(tag->content));
    text = std::string(trim(text.substr(tag->end)));
  }
  if (auto wrapped = find_block(text, "query")) {
    text = std::string(trim(wrapped->content));
  }
  if (text.empty()) {
    throw Error(ErrorCode::kParse, "query turn has no text after stripping tags");
  }
  query.text = std::move(text);
  return query;
}

}  // namespace

bool is_plan(const PlannerAction& action) { return std::holds_alternative<PlanAction>(action); }
bool is_query(const PlannerAction& action) { return std::holds_alternative<QueryAction>(action); }
bool is_stop(const PlannerAction& action) { return std::holds_alternative<StopAction>(action); }

PlannerAction parse_planner_turn(const std::string& raw, std::size_t turn_index) {
  if (trim(raw).empty()) {
    throw Error(ErrorCode::kParse, "empty planner turn");
  }
  if (turn_index == 0) return parse_plan_turn(raw);
  if (trim(raw) == kStopTag) return StopAction{};
  return parse_query_turn(raw);
}

std::string serialize_planner_action(const PlannerAction& action) {
  if (const auto* plan = std::get_if<PlanAction>(&action)) {
    nlohmann::json goals = plan->sub_goals;
    return "<task_breakdown>\n" + plan->breakdown + "\n</task_breakdown>\n<sub_goals>\n" +
           goals.dump() + "\n</sub_goals>";
  }
  if (const auto* query = std::get_if<QueryAction>(&action)) {
    if (query->sub_goal_tag) {
      return "<sub_goal> " + *query->sub_goal_tag + " </sub_goal> " + query->text;
    }
    return query->text;
  }
  return kStopTag;
}

std::string format_feedback(const RetrievalRun& run, const ToolCorpus& corpus, std::size_t k) {
  std::string out = "System retrieved tools for previous query: ";
  if (run.hits.empty()) {
    out += "\n(no results)";
    return out;
  }
  const std::size_t take = std::min(k, run.hits.size());
  for (std::size_t i = 0; i < take; ++i) {
    const RetrievalHit& hit = run.hits[i];
    out += "\n" + std::to_string(i + 1) + ". ";
    if (const ToolDoc* tool = corpus.find(hit.tool_id)) {
      out += render_tool_doc(*tool, RenderStyle::kFeedbackLine) + ": " + tool->description;
    } else {
      out += hit.tool_id;
    }
  }
  return out;
}

const std::string& default_system_prompt() {
  static const std::string prompt =
      "You are a Multi-Turn Tool Retrieval Planner, an expert AI assistant that deconstructs a "
      "user's query into a logical plan and then executes that plan to find the best tools.\n\n"
      "You must perform one of the following:\n"
      "- To create the initial plan, you must output a <task_breakdown> block followed by a "
      "<sub_goals> block on the next line.\n"
      "- To execute your plan, you must output a single functional search query in a <query> "
      "block.\n"
      "- To end the retrieval process, you must output the <stop_retrieval> tag when you have "
      "found tools for all sub-goals.";
  return prompt;
}

std::vector<ChatMessage> build_transcript(const std::string& system_prompt,
                                          const EpisodeView& view) {
  std::vector<ChatMessage> messages;
  messages.push_back({"system", system_prompt});
  messages.push_back({"user", kUserQueryPrefix + view.user_query});
  if (view.plan) {
    messages.push_back({"assistant", serialize_planner_action(*view.plan)});
    messages.push_back({"user", kBeginRetrievalPrompt});
    for (const auto& [query, feedback] : view.turns) {
      messages.push_back({"assistant", serialize_planner_action(query)});
      messages.push_back({"user", feedback});
    }
  }
  return messages;
}

ScriptedPlanner::ScriptedPlanner(std::vector<PlannerAction> script) : script_(std::move(script)) {
  if (script_.empty() || !is_plan(script_.front())) {
    throw Error(ErrorCode::kInvalidArgument, "scripted planner must begin with a Plan action");
  }
  if (!is_stop(script_.back())) {
    throw Error(ErrorCode::kInvalidArgument, "scripted planner must end with a Stop action");
  }
}

PlannerAction ScriptedPlanner::next_action(const EpisodeView&) {
  if (cursor_ >= script_.size()) {
    throw Error(ErrorCode::kProtocol, "scripted planner asked for an action past its script");
  }
  return script_[cursor_++];
}

RemotePlanner::RemotePlanner(RemotePlannerConfig config)
    : config_(std::move(config)), client_(config_.chat) {
  if (config_.system_prompt.empty()) config_.system_prompt = default_system_prompt();
}

PlannerAction RemotePlanner::next_action(const EpisodeView& view) {
  const std::size_t turn_index = view.plan ? 1 + view.turns.size() : 0;
  std::vector<ChatMessage> messages = build_transcript(config_.system_prompt, view);

  std::string last_reply;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_parse_retries; ++attempt) {
    last_reply = client_.complete(messages);
    try {
      return parse_planner_turn(last_reply, turn_index);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorCode::kParse, "planner reply did not parse after " +
                                     std::to_string(config_.max_parse_retries + 1) +
                                     " attempts (" + last_error + "); last reply: " + last_reply);
}

}  // namespace toolqp
