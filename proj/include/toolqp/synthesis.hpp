#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "toolqp/chat_client.hpp"
#include "toolqp/corpus.hpp"
#include "toolqp/planner.hpp"
#include "toolqp/retriever.hpp"

namespace toolqp {

struct SynthesisConfig {
  std::size_t candidates_per_attempt = 5;  // N
  std::size_t rank_threshold = 5;          // acceptance cap on AvgRank
  double p_keep_failed = 0.4;
  std::size_t max_escalations = 5;
  std::size_t feedback_k = 5;    // tools shown per feedback turn
  std::size_t search_k_cap = 0;  // 0 -> full corpus (exact ranks)
  std::uint64_t seed = 0;
};

// One input record for trajectory generation.
struct SynthesisRecord {
  std::string record_id;
  std::string user_query;
  std::string plan;
  std::vector<std::string> target_ids;
  std::string dataset;
};

std::vector<SynthesisRecord> read_synthesis_records(const std::string& path);

struct SubTaskAssignment {
  std::string sub_task;
  std::vector<std::string> assigned_targets;
};

// What the teacher sees when asked for candidate queries. The rendered
// context accumulates across escalation levels; levels below 5 never carry
// the target tool's name.
struct QueryGenContext {
  std::string user_query;
  std::string plan;
  std::vector<std::pair<std::string, std::string>> completed_steps;  // (goal, query)
  std::string sub_task;
  std::size_t level = 1;
  std::string context_text;
};

class Teacher {
 public:
  virtual ~Teacher() = default;

  virtual std::vector<SubTaskAssignment> parse_subtasks(const std::string& user_query,
                                                        const std::string& plan,
                                                        const std::vector<std::string>& targets) = 0;
  virtual std::vector<std::string> generate_queries(const QueryGenContext& context,
                                                    std::size_t n) = 0;
};

// Validates a teacher's sub-task split: unknown target ids error out, and an
// uncovered target triggers one re-prompt before the record is rejected.
// Overlapping assignments are allowed but reported through `warnings`.
std::vector<SubTaskAssignment> parse_subtasks_validated(Teacher& teacher, const ToolCorpus& corpus,
                                                        const SynthesisRecord& record,
                                                        std::vector<std::string>* warnings);

struct FailedAttempt {
  std::string query;
  RetrievalRun run;
};

struct EscalationState {
  std::string sub_task;
  std::vector<const ToolDoc*> targets;         // this sub-task's assignment
  std::vector<const ToolDoc*> record_targets;  // every target of the record;
                                               // all are kept out of level 1-4
                                               // contexts, not just the
                                               // current assignment
  std::string plan;
  std::vector<FailedAttempt> failures;
  std::optional<FailedAttempt> plan_augmented;  // filled before level 4
};

// Renders the cumulative escalation context for one attempt level:
//   1  sub-task goal only
//   2  + target description (never the name)
//   3  + previous failed query and its retrieved tools
//   4  + plan-augmented previous attempt results
//   5  + full target documentation minus the tool name
std::string escalation_context(std::size_t level, const EscalationState& state,
                               const ToolCorpus& corpus);

struct CandidateSelection {
  std::string query;
  RetrievalRun run;
  bool accepted = false;
  double avg_rank = 0.0;
  double recall_at_threshold = 0.0;
  std::size_t candidate_index = 0;
};

// Searches every candidate at full-corpus depth and picks the best by
// (highest recall within the threshold, lowest AvgRank, lowest index).
// Targets absent from a run are penalized with rank corpus_size + 1.
CandidateSelection select_best_candidate(const std::vector<std::string>& candidates,
                                         const Retriever& retriever,
                                         const std::vector<std::string>& assigned_targets,
                                         const SynthesisConfig& config);

struct SftTranscript {
  std::string record_id;
  std::vector<ChatMessage> messages;
};

std::string serialize_sft_transcript(const SftTranscript& transcript);

struct SubTaskAudit {
  std::string record_id;
  std::string sub_task;
  std::size_t level_reached = 0;
  double accepted_avg_rank = 0.0;
  bool accepted = false;
  bool kept_failures = false;
};

struct SynthesisResult {
  std::optional<SftTranscript> transcript;
  std::vector<SubTaskAudit> audits;
  std::vector<std::string> warnings;
  std::string drop_reason;  // set when transcript is absent
};

SynthesisResult synthesize_record(Teacher& teacher, const Retriever& retriever,
                                  const ToolCorpus& corpus, const SynthesisRecord& record,
                                  const SynthesisConfig& config);

// Writes transcripts as JSONL; every assistant turn is validated against the
// turn grammar before writing. Returns the number of lines written.
std::size_t emit_sft_dataset(const std::vector<SftTranscript>& transcripts,
                             const std::string& path);

std::string audit_tsv_header();
std::string audit_tsv_row(const SubTaskAudit& audit);

// Deterministic test double: fixed assignments plus per-(sub-task, level)
// candidate lists.
class ScriptedTeacher : public Teacher {
 public:
  using CandidateLevels = std::vector<std::vector<std::string>>;  // [level-1] -> candidates

  ScriptedTeacher(std::vector<SubTaskAssignment> assignments,
                  std::map<std::string, CandidateLevels> candidates);

  std::vector<SubTaskAssignment> parse_subtasks(const std::string& user_query,
                                                const std::string& plan,
                                                const std::vector<std::string>& targets) override;
  std::vector<std::string> generate_queries(const QueryGenContext& context,
                                            std::size_t n) override;

 private:
  std::vector<SubTaskAssignment> assignments_;
  std::map<std::string, CandidateLevels> candidates_;
};

// Zero-network teacher that derives sub-tasks and candidate queries from the
// corpus documentation; useful for offline pipelines and smoke tests.
class OfflineTeacher : public Teacher {
 public:
  explicit OfflineTeacher(const ToolCorpus& corpus);

  std::vector<SubTaskAssignment> parse_subtasks(const std::string& user_query,
                                                const std::string& plan,
                                                const std::vector<std::string>& targets) override;
  std::vector<std::string> generate_queries(const QueryGenContext& context,
                                            std::size_t n) override;

 private:
  const ToolCorpus& corpus_;
};

struct RemoteTeacherConfig {
  ChatClientConfig chat;
  int max_parse_retries = 2;
};

// Chat-backed teacher. Sub-task splits are requested as JSON; candidate
// queries as a JSON list of strings.
class RemoteTeacher : public Teacher {
 public:
  explicit RemoteTeacher(RemoteTeacherConfig config);

  std::vector<SubTaskAssignment> parse_subtasks(const std::string& user_query,
                                                const std::string& plan,
                                                const std::vector<std::string>& targets) override;
  std::vector<std::string> generate_queries(const QueryGenContext& context,
                                            std::size_t n) override;

 private:
  RemoteTeacherConfig config_;
  ChatClient client_;
};

}  // namespace toolqp
