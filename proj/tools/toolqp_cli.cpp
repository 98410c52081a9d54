// Command-line front end for the toolqp engine. All engine work goes through
// the C API in toolqp.h; this binary only parses flags, assembles the config
// document, and reports results.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "toolqp.h"

namespace {

using nlohmann::json;

struct CommonFlags {
  std::string config_path;
  std::string corpus;
  std::string index_cache;
  std::string embedder;
  std::size_t dim = 0;
  long long seed = -1;
  int parallel = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "engine config file (JSON)");
  cmd->add_option("--corpus", flags.corpus, "tool corpus JSONL");
  cmd->add_option("--index-cache", flags.index_cache, "index cache file");
  cmd->add_option("--embedder", flags.embedder, "embedder backend: hash | remote");
  cmd->add_option("--dim", flags.dim, "hash embedder dimension");
  cmd->add_option("--seed", flags.seed, "master RNG seed");
  cmd->add_option("--parallel", flags.parallel, "record/episode fan-out");
}

json load_config(const CommonFlags& flags) {
  json config = json::object();
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) {
      throw CLI::ValidationError("--config", "cannot open " + flags.config_path);
    }
    in >> config;
  }
  if (!flags.corpus.empty()) config["corpus"] = flags.corpus;
  if (!flags.index_cache.empty()) config["index_cache"] = flags.index_cache;
  if (!flags.embedder.empty()) config["embedder"]["backend"] = flags.embedder;
  if (flags.dim > 0) config["embedder"]["dim"] = flags.dim;
  if (flags.seed >= 0) config["seed"] = flags.seed;
  if (flags.parallel > 0) config["parallel"] = flags.parallel;
  return config;
}

int finish(tqp_status status, char* report) {
  if (report) {
    try {
      json node = json::parse(report);
      std::cout << "succeeded: " << node["succeeded"] << ", failed: " << node["failed"] << "\n";
      for (const auto& message : node["messages"]) {
        std::cout << "  " << message.get<std::string>() << "\n";
      }
    } catch (...) {
      std::cout << report << "\n";
    }
    tqp_string_free(report);
  }
  if (status == TQP_OK) return 0;
  if (status == TQP_PARTIAL) {
    std::cerr << "warning: some records failed\n";
    return 1;
  }
  std::cerr << "error: " << tqp_last_error() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toolqp: interactive query-planning tool retrieval engine"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* index_cmd = app.add_subcommand("index", "build and cache the retrieval index");
  add_common_flags(index_cmd, flags);

  auto* retrieve_cmd =
      app.add_subcommand("retrieve", "run planner episodes and write fused rankings");
  add_common_flags(retrieve_cmd, flags);
  std::string eval_path, single_query, out_dir = "out";
  std::string aggregation, planner_kind, planner_script;
  std::size_t max_turns = 0, feedback_k = 0, eval_k = 0;
  bool no_anchor = false;
  retrieve_cmd->add_option("--eval", eval_path, "eval records JSONL");
  retrieve_cmd->add_option("--query", single_query, "single ad-hoc query");
  retrieve_cmd->add_option("--out", out_dir, "output directory");
  retrieve_cmd->add_option("--aggregation", aggregation, "peak_rank | rrf | multi_view");
  retrieve_cmd->add_option("--planner", planner_kind, "scripted | remote");
  retrieve_cmd->add_option("--script", planner_script, "scripted planner file");
  retrieve_cmd->add_option("--max-turns", max_turns, "episode turn cap");
  retrieve_cmd->add_option("--feedback-k", feedback_k, "tools shown per feedback turn");
  retrieve_cmd->add_flag("--no-anchor", no_anchor, "skip the raw user-query anchor run");

  auto* eval_cmd = app.add_subcommand("eval", "score fused rankings against eval records");
  add_common_flags(eval_cmd, flags);
  std::string fused_path;
  eval_cmd->add_option("--fused", fused_path, "fused rankings JSONL")->required();
  eval_cmd->add_option("--eval", eval_path, "eval records JSONL")->required();
  eval_cmd->add_option("--out", out_dir, "output directory");
  eval_cmd->add_option("--k", eval_k, "metric cutoff K");

  auto* synthesize_cmd = app.add_subcommand("synthesize", "generate verified SFT transcripts");
  add_common_flags(synthesize_cmd, flags);
  std::string records_path, teacher_kind;
  double p_keep = -1.0;
  synthesize_cmd->add_option("--records", records_path, "records JSONL")->required();
  synthesize_cmd->add_option("--out", out_dir, "output directory");
  synthesize_cmd->add_option("--teacher", teacher_kind, "offline | remote");
  synthesize_cmd->add_option("--p-keep-failed", p_keep, "probability of keeping failed attempts");

  auto* reward_cmd = app.add_subcommand("reward", "compute rollout rewards from trajectories");
  add_common_flags(reward_cmd, flags);
  std::string trajectory_path;
  reward_cmd->add_option("--trajectories", trajectory_path, "trajectory JSONL")->required();
  reward_cmd->add_option("--eval", eval_path, "eval records JSONL")->required();
  reward_cmd->add_option("--out", out_dir, "output directory");
  reward_cmd->add_option("--aggregation", aggregation, "peak_rank | rrf | multi_view");

  CLI11_PARSE(app, argc, argv);

  json config;
  try {
    config = load_config(flags);
    if (!aggregation.empty()) config["aggregation"]["method"] = aggregation;
    if (!planner_kind.empty()) config["planner"]["kind"] = planner_kind;
    if (!planner_script.empty()) config["planner"]["script"] = planner_script;
    if (max_turns > 0) config["episode"]["max_turns"] = max_turns;
    if (feedback_k > 0) config["episode"]["feedback_k"] = feedback_k;
    if (no_anchor) config["episode"]["include_user_query_run"] = false;
    if (eval_k > 0) config["metrics"]["k"] = eval_k;
    if (!teacher_kind.empty()) config["teacher"]["kind"] = teacher_kind;
    if (p_keep >= 0.0) config["synthesis"]["p_keep_failed"] = p_keep;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  const std::string config_text = config.dump();

  char* report = nullptr;
  tqp_status status = TQP_ERR_INTERNAL;
  if (index_cmd->parsed()) {
    status = tqp_cmd_index(config_text.c_str(), &report);
  } else if (retrieve_cmd->parsed()) {
    if (eval_path.empty() && single_query.empty()) {
      std::cerr << "error: retrieve needs --eval or --query\n";
      return 2;
    }
    status = tqp_cmd_retrieve(config_text.c_str(), eval_path.c_str(), single_query.c_str(),
                              out_dir.c_str(), &report);
  } else if (eval_cmd->parsed()) {
    status = tqp_cmd_eval(config_text.c_str(), fused_path.c_str(), eval_path.c_str(),
                          out_dir.c_str(), &report);
  } else if (synthesize_cmd->parsed()) {
    status = tqp_cmd_synthesize(config_text.c_str(), records_path.c_str(), out_dir.c_str(),
                                &report);
  } else if (reward_cmd->parsed()) {
    status = tqp_cmd_reward(config_text.c_str(), trajectory_path.c_str(), eval_path.c_str(),
                            out_dir.c_str(), &report);
  }
  return finish(status, report);
}
