#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "toolqp/aggregation.hpp"
#include "toolqp/corpus.hpp"
#include "toolqp/episode.hpp"
#include "toolqp/metrics.hpp"
#include "toolqp/planner.hpp"
#include "toolqp/retriever.hpp"
#include "toolqp/reward.hpp"
#include "toolqp/synthesis.hpp"

namespace toolqp {

struct EmbedderSettings {
  std::string backend = "hash";  // "hash" | "remote"
  std::size_t dim = 256;
  std::uint64_t seed = 0;
  std::string endpoint;
  std::string path = "/v1/embeddings";
  std::string model;
  std::string api_key_env = "EMBED_API_KEY";
  std::string instruction;
  std::size_t batch_size = 64;
  int max_retries = 3;
  int backoff_ms = 100;
};

struct PlannerSettings {
  std::string kind = "scripted";  // "scripted" | "remote"
  std::string script_path;
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "CHAT_API_KEY";
  double temperature = 0.0;
  int max_retries = 3;
  int max_parse_retries = 2;
  std::string system_prompt_path;
};

struct TeacherSettings {
  std::string kind = "offline";  // "offline" | "remote"
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "CHAT_API_KEY";
  double temperature = 1.0;
  int max_retries = 3;
  int max_parse_retries = 2;
};

struct AggregationSettings {
  FusionMethod method = FusionMethod::kPeakRank;
  double rrf_c = 60.0;
};

struct MetricsSettings {
  std::size_t k = 10;
  std::map<std::string, std::string> categories;  // dataset -> category
};

struct RewardSettings {
  std::size_t k = 5;
  RewardWeights weights;
};

// All defaults match the pipeline's standard constants: 5 feedback tools per
// turn, 10 turns max, rank threshold 5, keep probability 0.4, K=10 for
// evaluation and K=5 for reward.
struct EngineConfig {
  std::string corpus_path;
  std::string index_cache;
  RenderStyle render_style = RenderStyle::kSchemaJson;
  EmbedderSettings embedder;
  PlannerSettings planner;
  EpisodeConfig episode;
  AggregationSettings aggregation;
  MetricsSettings metrics;
  TeacherSettings teacher;
  SynthesisConfig synthesis;
  RewardSettings reward;
  std::uint64_t seed = 0;
  int parallel = 1;

  static EngineConfig from_json(const nlohmann::json& node);
  static EngineConfig from_file(const std::string& path);
  nlohmann::ordered_json to_json() const;
};

std::shared_ptr<Embedder> make_embedder(const EngineConfig& config);
std::unique_ptr<Planner> make_planner(const EngineConfig& config, const std::string& query_id);
std::unique_ptr<Teacher> make_teacher(const EngineConfig& config, const ToolCorpus& corpus);

// Scripted planner files: {"default": [actions], "per_query": {id: [actions]}}
// with actions {"plan": {"breakdown", "sub_goals"}}, {"query": "...",
// "sub_goal"?: "..."} and {"stop": true}.
std::vector<PlannerAction> parse_scripted_actions(const nlohmann::json& actions);

struct CommandOutcome {
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  std::vector<std::string> messages;

  // 0 all records fine, 1 partial failures, 2 nothing succeeded.
  int exit_code() const;
};

CommandOutcome cmd_index(const EngineConfig& config);
CommandOutcome cmd_retrieve(const EngineConfig& config, const std::string& eval_path,
                            const std::string& single_query, const std::string& out_dir);
CommandOutcome cmd_eval(const EngineConfig& config, const std::string& fused_path,
                        const std::string& eval_path, const std::string& out_dir);
CommandOutcome cmd_synthesize(const EngineConfig& config, const std::string& records_path,
                              const std::string& out_dir);
CommandOutcome cmd_reward(const EngineConfig& config, const std::string& trajectory_path,
                          const std::string& eval_path, const std::string& out_dir);

}  // namespace toolqp
