#include "toolqp/synthesis.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

using ordered_json = nlohmann::ordered_json;

double uniform_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

// Replaces exact occurrences of each target's name and id; keeps escalation
// levels 1-4 free of target identifiers.
std::string redact_names(std::string text, const std::vector<const ToolDoc*>& targets) {
  for (const ToolDoc* target : targets) {
    for (const std::string& needle : {target->name, target->id}) {
      if (needle.empty()) continue;
      std::size_t pos = 0;
      while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), "the tool");
        pos += 8;
      }
    }
  }
  return text;
}

std::string render_hits_for_context(const RetrievalRun& run, const ToolCorpus& corpus,
                                    const std::vector<const ToolDoc*>& targets,
                                    std::size_t limit) {
  std::unordered_set<std::string> target_ids;
  for (const ToolDoc* target : targets) target_ids.insert(target->id);

  std::string out;
  std::size_t shown = 0;
  for (const RetrievalHit& hit : run.hits) {
    if (shown >= limit) break;
    if (target_ids.count(hit.tool_id)) continue;  // never leak the target here
    const ToolDoc* tool = corpus.find(hit.tool_id);
    if (!tool) continue;
    if (!out.empty()) out += "\n";
    out += render_tool_doc(*tool, RenderStyle::kFeedbackLine) + ": " + tool->description;
    ++shown;
  }
  return out.empty() ? "(no results)" : out;
}

std::string doc_without_name(const ToolDoc& tool) {
  ordered_json node = ordered_json::object();
  node["description"] = tool.description;
  ordered_json params = ordered_json::object();
  for (const auto& [pname, param] : tool.parameters) {
    ordered_json p = ordered_json::object();
    p["description"] = param.description;
    p["type"] = param.type;
    if (param.required) p["required"] = true;
    params[pname] = p;
  }
  node["parameters"] = params;
  return node.dump();
}

// Extracts the outermost JSON array or object from a chat reply that may be
// wrapped in code fences or prose.
std::string extract_json_payload(const std::string& reply, char open, char close) {
  std::size_t begin = reply.find(open);
  std::size_t end = reply.rfind(close);
  if (begin == std::string::npos || end == std::string::npos || end <= begin) {
    throw Error(ErrorCode::kParse, "reply contains no JSON payload");
  }
  return reply.substr(begin, end - begin + 1);
}

}  // namespace

std::vector<SynthesisRecord> read_synthesis_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open records file: " + path);

  std::vector<SynthesisRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    nlohmann::json node;
    try {
      node = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParse, "malformed record on line " + std::to_string(line_number) +
                                         ": " + e.what());
    }
    SynthesisRecord record;
    record.record_id = node.contains("record_id") ? node["record_id"].get<std::string>()
                       : node.contains("query_id") ? node["query_id"].get<std::string>()
                                                   : "r" + std::to_string(line_number);
    record.user_query = node.at("query").get<std::string>();
    record.plan = node.contains("plan") ? node["plan"].get<std::string>() : "";
    for (const auto& target : node.at("target_tool_ids")) {
      record.target_ids.push_back(target.get<std::string>());
    }
    record.dataset = node.contains("dataset") ? node["dataset"].get<std::string>() : "default";
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<SubTaskAssignment> parse_subtasks_validated(Teacher& teacher, const ToolCorpus& corpus,
                                                        const SynthesisRecord& record,
                                                        std::vector<std::string>* warnings) {
  if (record.target_ids.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "record '" + record.record_id + "' has no targets");
  }

  auto validate = [&](const std::vector<SubTaskAssignment>& assignments,
                      std::vector<std::string>* uncovered) {
    std::set<std::string> covered;
    std::set<std::string> seen;
    for (const SubTaskAssignment& assignment : assignments) {
      if (assignment.assigned_targets.empty()) {
        throw Error(ErrorCode::kParse,
                    "sub-task '" + assignment.sub_task + "' has no assigned targets");
      }
      for (const std::string& target : assignment.assigned_targets) {
        if (!corpus.find(target)) {
          throw Error(ErrorCode::kParse, "teacher assigned unknown tool '" + target + "'");
        }
        if (!seen.insert(target).second && warnings) {
          warnings->push_back("target '" + target + "' assigned to multiple sub-tasks");
        }
        covered.insert(target);
      }
    }
    for (const std::string& target : record.target_ids) {
      if (!covered.count(target)) uncovered->push_back(target);
    }
  };

  std::vector<SubTaskAssignment> assignments =
      teacher.parse_subtasks(record.user_query, record.plan, record.target_ids);
  std::vector<std::string> uncovered;
  validate(assignments, &uncovered);
  if (!uncovered.empty()) {
    // One re-prompt before giving up on the record.
    assignments = teacher.parse_subtasks(record.user_query, record.plan, record.target_ids);
    uncovered.clear();
    validate(assignments, &uncovered);
    if (!uncovered.empty()) {
      throw Error(ErrorCode::kParse, "uncovered target '" + uncovered.front() + "'");
    }
  }
  return assignments;
}

std::string escalation_context(std::size_t level, const EscalationState& state,
                               const ToolCorpus& corpus) {
  if (level < 1 || level > 5) {
    throw Error(ErrorCode::kInvalidArgument, "escalation level must be in 1..5");
  }
  // Redaction and listing exclusion cover every target of the record.
  std::vector<const ToolDoc*> hidden = state.record_targets.empty() ? state.targets
                                                                    : state.record_targets;

  std::vector<std::string> blocks;
  blocks.push_back(redact_names(
      "[Goal For Your Current Step]: Find a tool for \"" + state.sub_task + "\"\n" +
          "Task to focus on: craft a functional query to retrieve a tool that can address the "
          "current step goal. You can include information or keywords from the goal in your "
          "functional query",
      hidden));

  if (level >= 2) {
    std::string hints;
    for (const ToolDoc* target : state.targets) {
      if (!hints.empty()) hints += "\n";
      hints += "We should look for a tool with this description: \"" + target->description + "\"";
    }
    blocks.push_back(redact_names(hints, hidden));
  }
  if (level >= 3 && !state.failures.empty()) {
    const FailedAttempt& last = state.failures.back();
    blocks.push_back(redact_names(
        "Previously retrieved with query \"" + last.query + "\", here's the retrieved tools:\n" +
            render_hits_for_context(last.run, corpus, hidden, 5),
        hidden));
  }
  if (level >= 4 && !state.failures.empty()) {
    const FailedAttempt& last = state.failures.back();
    std::string block = "Previously retrieved with query \"" + last.query + "\", tools: " +
                        render_hits_for_context(last.run, corpus, hidden, 5);
    if (state.plan_augmented) {
      block += "\nPreviously retrieved with query \"" + state.plan_augmented->query +
               "\", tools: " +
               render_hits_for_context(state.plan_augmented->run, corpus, hidden, 5);
    }
    blocks.push_back(redact_names(block, hidden));
  }
  if (level >= 5) {
    std::string hints;
    for (const ToolDoc* target : state.targets) {
      if (!hints.empty()) hints += "\n";
      hints += "Hint: Full Target Tool Info: " + doc_without_name(*target) + ".";
    }
    hints +=
        "\nInclude information from 'description' and relevant parameter names in the functional "
        "query.";
    blocks.push_back(hints);
  }

  std::string out;
  for (const std::string& block : blocks) {
    if (!out.empty()) out += "\n";
    out += block;
  }
  return out;
}

CandidateSelection select_best_candidate(const std::vector<std::string>& candidates,
                                         const Retriever& retriever,
                                         const std::vector<std::string>& assigned_targets,
                                         const SynthesisConfig& config) {
  if (candidates.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "select_best_candidate requires candidates");
  }
  if (assigned_targets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "select_best_candidate requires targets");
  }

  const std::size_t corpus_size = retriever.index().size();
  const std::size_t depth = config.search_k_cap > 0 ? std::min(config.search_k_cap, corpus_size)
                                                    : corpus_size;
  const double absent_rank = static_cast<double>(corpus_size + 1);

  CandidateSelection best;
  bool have_best = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    RetrievalRun run = retriever.search(candidates[i], depth);
    double rank_sum = 0.0;
    std::size_t within_threshold = 0;
    for (const std::string& target : assigned_targets) {
      double rank = absent_rank;
      for (const RetrievalHit& hit : run.hits) {
        if (hit.tool_id == target) {
          rank = static_cast<double>(hit.rank);
          break;
        }
      }
      rank_sum += rank;
      if (rank <= static_cast<double>(config.rank_threshold)) ++within_threshold;
    }
    CandidateSelection current;
    current.query = candidates[i];
    current.run = std::move(run);
    current.avg_rank = rank_sum / static_cast<double>(assigned_targets.size());
    current.recall_at_threshold =
        static_cast<double>(within_threshold) / static_cast<double>(assigned_targets.size());
    current.candidate_index = i;

    const bool better =
        !have_best || current.recall_at_threshold > best.recall_at_threshold ||
        (current.recall_at_threshold == best.recall_at_threshold && current.avg_rank < best.avg_rank);
    if (better) {
      best = std::move(current);
      have_best = true;
    }
  }
  best.accepted = best.avg_rank <= static_cast<double>(config.rank_threshold);
  return best;
}

SynthesisResult synthesize_record(Teacher& teacher, const Retriever& retriever,
                                  const ToolCorpus& corpus, const SynthesisRecord& record,
                                  const SynthesisConfig& config) {
  if (config.rank_threshold < 1 || config.candidates_per_attempt < 1 ||
      config.max_escalations < 1 || config.p_keep_failed < 0.0 || config.p_keep_failed > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "synthesis config out of range");
  }
  SynthesisResult result;
  std::mt19937_64 rng(config.seed ^ fnv1a64(record.record_id));

  std::vector<SubTaskAssignment> assignments;
  try {
    assignments = parse_subtasks_validated(teacher, corpus, record, &result.warnings);
  } catch (const Error& e) {
    result.drop_reason = e.what();
    return result;
  }

  EpisodeView view;
  view.user_query = record.user_query;
  PlanAction plan;
  plan.breakdown = record.plan;
  for (const SubTaskAssignment& assignment : assignments) {
    plan.sub_goals.push_back(assignment.sub_task);
  }
  view.plan = std::move(plan);

  std::vector<const ToolDoc*> record_targets;
  for (const std::string& target : record.target_ids) {
    if (const ToolDoc* tool = corpus.find(target)) record_targets.push_back(tool);
  }

  std::vector<std::pair<std::string, std::string>> completed_steps;
  for (const SubTaskAssignment& assignment : assignments) {
    EscalationState state;
    state.sub_task = assignment.sub_task;
    state.plan = record.plan;
    state.record_targets = record_targets;
    for (const std::string& target : assignment.assigned_targets) {
      state.targets.push_back(corpus.find(target));
    }

    QueryGenContext context;
    context.user_query = record.user_query;
    context.plan = record.plan;
    context.completed_steps = completed_steps;
    context.sub_task = assignment.sub_task;

    SubTaskAudit audit;
    audit.record_id = record.record_id;
    audit.sub_task = assignment.sub_task;

    bool success = false;
    for (std::size_t level = 1; level <= config.max_escalations; ++level) {
      if (level >= 4 && !state.failures.empty() && !state.plan_augmented && !record.plan.empty()) {
        const std::string aug_query = state.failures.back().query + "\n" + record.plan;
        const std::size_t depth = config.search_k_cap > 0
                                      ? std::min(config.search_k_cap, retriever.index().size())
                                      : retriever.index().size();
        state.plan_augmented = FailedAttempt{aug_query, retriever.search(aug_query, depth)};
      }
      context.level = level;
      context.context_text = escalation_context(level, state, corpus);

      std::vector<std::string> candidates;
      try {
        candidates = teacher.generate_queries(context, config.candidates_per_attempt);
      } catch (const Error& e) {
        result.drop_reason = e.what();
        result.audits.push_back(audit);
        return result;
      }
      if (candidates.empty()) {
        result.drop_reason = "teacher returned no candidates for sub-task '" +
                             assignment.sub_task + "'";
        result.audits.push_back(audit);
        return result;
      }

      CandidateSelection selection =
          select_best_candidate(candidates, retriever, assignment.assigned_targets, config);
      audit.level_reached = level;
      if (selection.accepted) {
        const bool keep_draw = uniform_double(rng) < config.p_keep_failed;
        audit.accepted = true;
        audit.accepted_avg_rank = selection.avg_rank;
        audit.kept_failures = keep_draw && !state.failures.empty();
        if (audit.kept_failures) {
          for (const FailedAttempt& failure : state.failures) {
            QueryAction action{std::nullopt, failure.query};
            view.turns.emplace_back(action,
                                    format_feedback(failure.run, corpus, config.feedback_k));
          }
        }
        QueryAction action{std::nullopt, selection.query};
        view.turns.emplace_back(action,
                                format_feedback(selection.run, corpus, config.feedback_k));
        success = true;
        result.audits.push_back(audit);
        break;
      }
      state.failures.push_back({selection.query, std::move(selection.run)});
    }
    if (!success) {
      audit.accepted = false;
      result.audits.push_back(audit);
      result.drop_reason = "sub-task '" + assignment.sub_task + "' exhausted " +
                           std::to_string(config.max_escalations) + " escalation levels";
      return result;
    }

    completed_steps.emplace_back(assignment.sub_task, view.turns.back().first.text);
  }

  SftTranscript transcript;
  transcript.record_id = record.record_id;
  transcript.messages = build_transcript(default_system_prompt(), view);
  transcript.messages.push_back({"assistant", kStopTag});
  result.transcript = std::move(transcript);
  return result;
}

std::string serialize_sft_transcript(const SftTranscript& transcript) {
  ordered_json node = ordered_json::object();
  node["record_id"] = transcript.record_id;
  auto& messages = node["messages"] = ordered_json::array();
  for (const ChatMessage& message : transcript.messages) {
    messages.push_back({{"role", message.role}, {"content", message.content}});
  }
  return node.dump();
}

std::size_t emit_sft_dataset(const std::vector<SftTranscript>& transcripts,
                             const std::string& path) {
  // Validate before writing: every assistant turn must re-parse and the
  // transcript must end with the stop tag.
  for (const SftTranscript& transcript : transcripts) {
    std::size_t assistant_index = 0;
    bool ends_with_stop = false;
    for (const ChatMessage& message : transcript.messages) {
      if (message.role != "assistant") continue;
      PlannerAction action = parse_planner_turn(message.content, assistant_index);
      ends_with_stop = is_stop(action);
      ++assistant_index;
    }
    if (assistant_index == 0 || !ends_with_stop) {
      throw Error(ErrorCode::kInvalidArgument,
                  "transcript '" + transcript.record_id + "' does not end with the stop tag");
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write SFT file: " + path);
  for (const SftTranscript& transcript : transcripts) {
    out << serialize_sft_transcript(transcript) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
  return transcripts.size();
}

std::string audit_tsv_header() {
  return "record_id\tsub_task\tlevel_reached\taccepted_avg_rank\taccepted\tkept_failures\n";
}

std::string audit_tsv_row(const SubTaskAudit& audit) {
  char rank[32];
  std::snprintf(rank, sizeof(rank), "%.4f", audit.accepted_avg_rank);
  return audit.record_id + "\t" + audit.sub_task + "\t" + std::to_string(audit.level_reached) +
         "\t" + (audit.accepted ? rank : "-") + "\t" + (audit.accepted ? "1" : "0") + "\t" +
         (audit.kept_failures ? "1" : "0") + "\n";
}

ScriptedTeacher::ScriptedTeacher(std::vector<SubTaskAssignment> assignments,
                                 std::map<std::string, CandidateLevels> candidates)
    : assignments_(std::move(assignments)), candidates_(std::move(candidates)) {}

std::vector<SubTaskAssignment> ScriptedTeacher::parse_subtasks(const std::string&,
                                                               const std::string&,
                                                               const std::vector<std::string>&) {
  return assignments_;
}

std::vector<std::string> ScriptedTeacher::generate_queries(const QueryGenContext& context,
                                                           std::size_t n) {
  auto it = candidates_.find(context.sub_task);
  if (it == candidates_.end() || it->second.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "scripted teacher has no candidates for sub-task '" + context.sub_task + "'");
  }
  const std::size_t level_index = std::min(context.level - 1, it->second.size() - 1);
  std::vector<std::string> out = it->second[level_index];
  if (out.size() > n) out.resize(n);
  return out;
}

OfflineTeacher::OfflineTeacher(const ToolCorpus& corpus) : corpus_(corpus) {}

std::vector<SubTaskAssignment> OfflineTeacher::parse_subtasks(
    const std::string&, const std::string&, const std::vector<std::string>& targets) {
  std::vector<SubTaskAssignment> assignments;
  for (const std::string& target : targets) {
    const ToolDoc* tool = corpus_.find(target);
    std::string goal;
    if (tool && !tool->description.empty()) {
      // First sentence of the description serves as the semantic goal.
      goal = tool->description.substr(0, tool->description.find('.'));
    }
    if (goal.empty()) goal = "complete the step requiring this capability";
    assignments.push_back({goal, {target}});
  }
  return assignments;
}

std::vector<std::string> OfflineTeacher::generate_queries(const QueryGenContext& context,
                                                          std::size_t n) {
  // Content words of the escalation context, minus the template's own
  // vocabulary, are the only information this teacher uses.
  static const std::set<std::string> kTemplateWords = {
      "goal",     "for",       "your",     "current",  "step",     "task",     "to",
      "focus",    "on",        "craft",    "a",        "an",       "functional", "query",
      "retrieve", "tool",      "that",     "can",      "address",  "the",      "you",
      "include",  "information", "or",     "keywords", "from",     "in",       "we",
      "should",   "look",      "with",     "this",     "description", "previously",
      "retrieved", "here",     "s",        "tools",    "hint",     "full",     "target",
      "info",     "relevant",  "parameter", "names",   "no",       "results",  "find"};

  std::vector<std::string> words;
  for (const std::string& token : tokenize_words(context.context_text)) {
    if (kTemplateWords.count(token)) continue;
    if (std::find(words.begin(), words.end(), token) == words.end()) words.push_back(token);
  }
  if (words.empty()) words.push_back(context.sub_task);

  std::vector<std::string> candidates;
  const std::size_t take = std::min<std::size_t>(words.size(), 16);
  for (std::size_t i = 0; i < n; ++i) {
    std::string candidate;
    for (std::size_t j = 0; j < take; ++j) {
      const std::string& word = words[(j + i) % words.size()];
      if (!candidate.empty()) candidate += " ";
      candidate += word;
    }
    candidates.push_back(std::move(candidate));
  }
  return candidates;
}

RemoteTeacher::RemoteTeacher(RemoteTeacherConfig config)
    : config_(std::move(config)), client_(config_.chat) {}

std::vector<SubTaskAssignment> RemoteTeacher::parse_subtasks(
    const std::string& user_query, const std::string& plan,
    const std::vector<std::string>& targets) {
  std::vector<ChatMessage> messages;
  messages.push_back(
      {"system",
       "You are an expert planner. Given a user query, a task breakdown, and the list of target "
       "tool ids, split the breakdown into discrete sub-tasks and assign each target tool to the "
       "sub-task it completes. Every target must be assigned to at least one sub-task. Reply "
       "with a JSON list of objects: [{\"sub_task\": \"...\", \"target_ids\": [\"...\"]}] and "
       "nothing else."});
  std::string user = "User Query: " + user_query + "\nTask Breakdown: " + plan + "\nTargets:";
  for (const std::string& target : targets) user += "\n- " + target;
  messages.push_back({"user", user});

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_parse_retries; ++attempt) {
    const std::string reply = client_.complete(messages);
    try {
      nlohmann::json list = nlohmann::json::parse(extract_json_payload(reply, '[', ']'));
      std::vector<SubTaskAssignment> assignments;
      for (const auto& item : list) {
        SubTaskAssignment assignment;
        assignment.sub_task = item.at("sub_task").get<std::string>();
        for (const auto& id : item.at("target_ids")) {
          assignment.assigned_targets.push_back(id.get<std::string>());
        }
        assignments.push_back(std::move(assignment));
      }
      if (assignments.empty()) throw Error(ErrorCode::kParse, "empty sub-task list");
      return assignments;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorCode::kParse, "teacher sub-task reply did not parse: " + last_error);
}

std::vector<std::string> RemoteTeacher::generate_queries(const QueryGenContext& context,
                                                         std::size_t n) {
  std::vector<ChatMessage> messages;
  messages.push_back(
      {"system",
       "You are an expert AI Planner. Your goal is to find the best tools to solve a user's "
       "query by interacting with a tool retrieval system. A good tool query is a descriptive "
       "'functional query' that captures the tool's purpose, possibly including likely parameter "
       "names (e.g., 'city: string'), categories, or library types to aid retrieval, but not "
       "specific filled-in parameter values (e.g. 'city: Chicago') that may harm retrieval. "
       "Reply with a JSON list of " +
           std::to_string(n) + " candidate query strings and nothing else."});
  std::string user = "[Overall User Goal]: " + context.user_query + "\n[Your Overall Plan]: " +
                     context.plan + "\n[Previously Completed Steps]:";
  if (context.completed_steps.empty()) {
    user += " (none)";
  } else {
    for (std::size_t i = 0; i < context.completed_steps.size(); ++i) {
      user += "\n[Step " + std::to_string(i + 1) + "]\nGoal: \"" +
              context.completed_steps[i].first + "\"\nSuccessful Query: \"" +
              context.completed_steps[i].second + "\"";
    }
  }
  user += "\n---\n" + context.context_text + "\n---";
  messages.push_back({"user", user});

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_parse_retries; ++attempt) {
    const std::string reply = client_.complete(messages);
    try {
      nlohmann::json list = nlohmann::json::parse(extract_json_payload(reply, '[', ']'));
      std::vector<std::string> candidates;
      for (const auto& item : list) candidates.push_back(item.get<std::string>());
      if (candidates.empty()) throw Error(ErrorCode::kParse, "empty candidate list");
      if (candidates.size() > n) candidates.resize(n);
      return candidates;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorCode::kParse, "teacher candidate reply did not parse: " + last_error);
}

}  // namespace toolqp
