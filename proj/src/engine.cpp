#include "toolqp/engine.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* value = std::getenv(name.c_str());
  return value ? value : "";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write file: " + path);
  out << content;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

template <typename T>
void read_if(const nlohmann::json& node, const char* key, T& target) {
  if (node.contains(key)) target = node.at(key).get<T>();
}

// Runs fn(0..count-1) across up to `parallelism` threads. fn must write only
// to its own slot; outputs stay order-stable because slots are indexed.
template <typename Fn>
void parallel_for_ordered(std::size_t count, int parallelism, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(parallelism, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        fn(i);
      }
    });
  }
  for (std::thread& thread : threads) thread.join();
}

ChatClientConfig chat_config_from(const std::string& endpoint, const std::string& path,
                                  const std::string& model, const std::string& api_key_env,
                                  double temperature, int max_retries) {
  ChatClientConfig chat;
  chat.endpoint = endpoint;
  chat.path = path;
  chat.model = model;
  chat.api_key = env_or_empty(api_key_env);
  chat.temperature = temperature;
  chat.max_retries = max_retries;
  return chat;
}

Retriever open_retriever(const EngineConfig& config, const ToolCorpus& corpus,
                         std::shared_ptr<Embedder> embedder, std::vector<std::string>* messages) {
  if (!config.index_cache.empty() && fs::exists(config.index_cache)) {
    try {
      Index index = Index::load(config.index_cache, corpus);
      if (index.backend_name() == embedder->backend_name() &&
          index.render_style() == config.render_style) {
        return Retriever(std::move(index), std::move(embedder));
      }
      if (messages) {
        messages->push_back("index cache ignored: built with backend '" + index.backend_name() +
                            "', config wants '" + embedder->backend_name() + "'");
      }
    } catch (const Error& e) {
      if (messages) {
        messages->push_back(std::string("index cache unusable, rebuilding: ") + e.what());
      }
    }
  }
  Index index = Index::build(corpus, *embedder, config.render_style);
  if (!config.index_cache.empty()) index.save(config.index_cache);
  return Retriever(std::move(index), std::move(embedder));
}

std::map<std::string, std::string> category_map(const EngineConfig& config,
                                                const std::vector<EvalRecord>& records) {
  std::map<std::string, std::string> out = config.metrics.categories;
  for (const EvalRecord& record : records) {
    if (!out.count(record.dataset) && !record.category.empty()) {
      out[record.dataset] = record.category;
    }
  }
  return out;
}

ordered_json fused_to_json(const std::string& query_id, const FusedList& fused) {
  ordered_json node = ordered_json::object();
  node["query_id"] = query_id;
  node["method"] = to_string(fused.method);
  auto& hits = node["hits"] = ordered_json::array();
  for (const FusedHit& hit : fused.hits) {
    hits.push_back(
        {{"id", hit.tool_id}, {"score", hit.fused_score}, {"source_count", hit.source_count}});
  }
  return node;
}

}  // namespace

EngineConfig EngineConfig::from_json(const nlohmann::json& node) {
  EngineConfig config;
  read_if(node, "seed", config.seed);
  config.embedder.seed = config.seed;
  config.synthesis.seed = config.seed;

  read_if(node, "corpus", config.corpus_path);
  read_if(node, "index_cache", config.index_cache);
  read_if(node, "parallel", config.parallel);
  if (node.contains("render_style")) {
    config.render_style = render_style_from_string(node.at("render_style").get<std::string>());
  }
  if (node.contains("embedder")) {
    const auto& e = node.at("embedder");
    read_if(e, "backend", config.embedder.backend);
    read_if(e, "dim", config.embedder.dim);
    read_if(e, "seed", config.embedder.seed);
    read_if(e, "endpoint", config.embedder.endpoint);
    read_if(e, "path", config.embedder.path);
    read_if(e, "model", config.embedder.model);
    read_if(e, "api_key_env", config.embedder.api_key_env);
    read_if(e, "instruction", config.embedder.instruction);
    read_if(e, "batch_size", config.embedder.batch_size);
    read_if(e, "max_retries", config.embedder.max_retries);
    read_if(e, "backoff_ms", config.embedder.backoff_ms);
  }
  if (node.contains("planner")) {
    const auto& p = node.at("planner");
    read_if(p, "kind", config.planner.kind);
    read_if(p, "script", config.planner.script_path);
    read_if(p, "endpoint", config.planner.endpoint);
    read_if(p, "path", config.planner.path);
    read_if(p, "model", config.planner.model);
    read_if(p, "api_key_env", config.planner.api_key_env);
    read_if(p, "temperature", config.planner.temperature);
    read_if(p, "max_retries", config.planner.max_retries);
    read_if(p, "max_parse_retries", config.planner.max_parse_retries);
    read_if(p, "system_prompt_file", config.planner.system_prompt_path);
  }
  if (node.contains("episode")) {
    const auto& e = node.at("episode");
    read_if(e, "feedback_k", config.episode.feedback_k);
    read_if(e, "max_turns", config.episode.max_turns);
    read_if(e, "include_user_query_run", config.episode.include_user_query_run);
  }
  if (node.contains("aggregation")) {
    const auto& a = node.at("aggregation");
    if (a.contains("method")) {
      config.aggregation.method = fusion_method_from_string(a.at("method").get<std::string>());
    }
    read_if(a, "rrf_c", config.aggregation.rrf_c);
  }
  if (node.contains("metrics")) {
    const auto& m = node.at("metrics");
    read_if(m, "k", config.metrics.k);
    if (m.contains("categories")) {
      config.metrics.categories =
          m.at("categories").get<std::map<std::string, std::string>>();
    }
  }
  if (node.contains("teacher")) {
    const auto& t = node.at("teacher");
    read_if(t, "kind", config.teacher.kind);
    read_if(t, "endpoint", config.teacher.endpoint);
    read_if(t, "path", config.teacher.path);
    read_if(t, "model", config.teacher.model);
    read_if(t, "api_key_env", config.teacher.api_key_env);
    read_if(t, "temperature", config.teacher.temperature);
    read_if(t, "max_retries", config.teacher.max_retries);
    read_if(t, "max_parse_retries", config.teacher.max_parse_retries);
  }
  if (node.contains("synthesis")) {
    const auto& s = node.at("synthesis");
    read_if(s, "candidates", config.synthesis.candidates_per_attempt);
    read_if(s, "rank_threshold", config.synthesis.rank_threshold);
    read_if(s, "p_keep_failed", config.synthesis.p_keep_failed);
    read_if(s, "max_escalations", config.synthesis.max_escalations);
    read_if(s, "feedback_k", config.synthesis.feedback_k);
    read_if(s, "search_k_cap", config.synthesis.search_k_cap);
    read_if(s, "seed", config.synthesis.seed);
  }
  if (node.contains("reward")) {
    const auto& r = node.at("reward");
    read_if(r, "k", config.reward.k);
    if (r.contains("weights")) {
      const auto& w = r.at("weights");
      read_if(w, "b1_n", config.reward.weights.b1_n);
      read_if(w, "b1_r", config.reward.weights.b1_r);
      read_if(w, "b2_f", config.reward.weights.b2_f);
      read_if(w, "b2_s", config.reward.weights.b2_s);
      read_if(w, "b3", config.reward.weights.b3);
    }
  }
  return config;
}

EngineConfig EngineConfig::from_file(const std::string& path) {
  nlohmann::json node;
  try {
    node = nlohmann::json::parse(read_text_file(path));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, "config file " + path + ": " + e.what());
  }
  return from_json(node);
}

nlohmann::ordered_json EngineConfig::to_json() const {
  ordered_json node;
  node["corpus"] = corpus_path;
  node["index_cache"] = index_cache;
  node["render_style"] = to_string(render_style);
  node["seed"] = seed;
  node["parallel"] = parallel;
  node["embedder"] = {{"backend", embedder.backend},
                      {"dim", embedder.dim},
                      {"seed", embedder.seed},
                      {"endpoint", embedder.endpoint},
                      {"path", embedder.path},
                      {"model", embedder.model},
                      {"api_key_env", embedder.api_key_env},
                      {"instruction", embedder.instruction},
                      {"batch_size", embedder.batch_size},
                      {"max_retries", embedder.max_retries},
                      {"backoff_ms", embedder.backoff_ms}};
  node["planner"] = {{"kind", planner.kind},
                     {"script", planner.script_path},
                     {"endpoint", planner.endpoint},
                     {"path", planner.path},
                     {"model", planner.model},
                     {"api_key_env", planner.api_key_env},
                     {"temperature", planner.temperature},
                     {"max_retries", planner.max_retries},
                     {"max_parse_retries", planner.max_parse_retries},
                     {"system_prompt_file", planner.system_prompt_path}};
  node["episode"] = {{"feedback_k", episode.feedback_k},
                     {"max_turns", episode.max_turns},
                     {"include_user_query_run", episode.include_user_query_run}};
  node["aggregation"] = {{"method", to_string(aggregation.method)}, {"rrf_c", aggregation.rrf_c}};
  node["metrics"] = {{"k", metrics.k}, {"categories", metrics.categories}};
  node["teacher"] = {{"kind", teacher.kind},
                     {"endpoint", teacher.endpoint},
                     {"path", teacher.path},
                     {"model", teacher.model},
                     {"api_key_env", teacher.api_key_env},
                     {"temperature", teacher.temperature},
                     {"max_retries", teacher.max_retries},
                     {"max_parse_retries", teacher.max_parse_retries}};
  node["synthesis"] = {{"candidates", synthesis.candidates_per_attempt},
                       {"rank_threshold", synthesis.rank_threshold},
                       {"p_keep_failed", synthesis.p_keep_failed},
                       {"max_escalations", synthesis.max_escalations},
                       {"feedback_k", synthesis.feedback_k},
                       {"search_k_cap", synthesis.search_k_cap},
                       {"seed", synthesis.seed}};
  node["reward"] = {{"k", reward.k},
                    {"weights",
                     {{"b1_n", reward.weights.b1_n},
                      {"b1_r", reward.weights.b1_r},
                      {"b2_f", reward.weights.b2_f},
                      {"b2_s", reward.weights.b2_s},
                      {"b3", reward.weights.b3}}}};
  return node;
}

std::shared_ptr<Embedder> make_embedder(const EngineConfig& config) {
  if (config.embedder.backend == "hash") {
    return std::make_shared<HashEmbedder>(config.embedder.dim, config.embedder.seed);
  }
  if (config.embedder.backend == "remote") {
    RemoteEmbedderConfig remote;
    remote.endpoint = config.embedder.endpoint;
    remote.path = config.embedder.path;
    remote.model = config.embedder.model;
    remote.api_key = env_or_empty(config.embedder.api_key_env);
    remote.instruction = config.embedder.instruction;
    remote.max_batch_size = config.embedder.batch_size;
    remote.max_retries = config.embedder.max_retries;
    remote.backoff_initial_ms = config.embedder.backoff_ms;
    if (remote.endpoint.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "remote embedder requires an endpoint");
    }
    return std::make_shared<RemoteEmbedder>(remote);
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown embedder backend: " + config.embedder.backend);
}

std::vector<PlannerAction> parse_scripted_actions(const nlohmann::json& actions) {
  if (!actions.is_array()) {
    throw Error(ErrorCode::kParse, "planner script must be a JSON list of actions");
  }
  std::vector<PlannerAction> out;
  for (const auto& action : actions) {
    if (action.contains("plan")) {
      PlanAction plan;
      plan.breakdown = action.at("plan").at("breakdown").get<std::string>();
      plan.sub_goals = action.at("plan").at("sub_goals").get<std::vector<std::string>>();
      out.emplace_back(std::move(plan));
    } else if (action.contains("query")) {
      QueryAction query;
      query.text = action.at("query").get<std::string>();
      if (action.contains("sub_goal")) {
        query.sub_goal_tag = action.at("sub_goal").get<std::string>();
      }
      out.emplace_back(std::move(query));
    } else if (action.contains("stop")) {
      out.emplace_back(StopAction{});
    } else {
      throw Error(ErrorCode::kParse, "script action needs one of: plan, query, stop");
    }
  }
  return out;
}

std::unique_ptr<Planner> make_planner(const EngineConfig& config, const std::string& query_id) {
  if (config.planner.kind == "scripted") {
    if (config.planner.script_path.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "scripted planner requires a script file");
    }
    nlohmann::json script;
    try {
      script = nlohmann::json::parse(read_text_file(config.planner.script_path));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParse,
                  "planner script " + config.planner.script_path + ": " + e.what());
    }
    if (script.contains("per_query") && script.at("per_query").contains(query_id)) {
      return std::make_unique<ScriptedPlanner>(
          parse_scripted_actions(script.at("per_query").at(query_id)));
    }
    if (script.contains("default")) {
      return std::make_unique<ScriptedPlanner>(parse_scripted_actions(script.at("default")));
    }
    if (script.is_array()) {
      return std::make_unique<ScriptedPlanner>(parse_scripted_actions(script));
    }
    throw Error(ErrorCode::kParse, "planner script has no actions for query '" + query_id + "'");
  }
  if (config.planner.kind == "remote") {
    RemotePlannerConfig remote;
    remote.chat = chat_config_from(config.planner.endpoint, config.planner.path,
                                   config.planner.model, config.planner.api_key_env,
                                   config.planner.temperature, config.planner.max_retries);
    remote.max_parse_retries = config.planner.max_parse_retries;
    if (!config.planner.system_prompt_path.empty()) {
      remote.system_prompt = read_text_file(config.planner.system_prompt_path);
    }
    if (remote.chat.endpoint.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "remote planner requires an endpoint");
    }
    return std::make_unique<RemotePlanner>(remote);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown planner kind: " + config.planner.kind);
}

std::unique_ptr<Teacher> make_teacher(const EngineConfig& config, const ToolCorpus& corpus) {
  if (config.teacher.kind == "offline") {
    return std::make_unique<OfflineTeacher>(corpus);
  }
  if (config.teacher.kind == "remote") {
    RemoteTeacherConfig remote;
    remote.chat = chat_config_from(config.teacher.endpoint, config.teacher.path,
                                   config.teacher.model, config.teacher.api_key_env,
                                   config.teacher.temperature, config.teacher.max_retries);
    remote.max_parse_retries = config.teacher.max_parse_retries;
    if (remote.chat.endpoint.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "remote teacher requires an endpoint");
    }
    return std::make_unique<RemoteTeacher>(remote);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown teacher kind: " + config.teacher.kind);
}

int CommandOutcome::exit_code() const {
  if (failed == 0) return 0;
  if (succeeded == 0) return 2;
  return 1;
}

CommandOutcome cmd_index(const EngineConfig& config) {
  CommandOutcome outcome;
  ToolCorpus corpus = ToolCorpus::load(config.corpus_path);
  if (corpus.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "corpus is empty: " + config.corpus_path);
  }
  std::shared_ptr<Embedder> embedder = make_embedder(config);

  if (!config.index_cache.empty() && fs::exists(config.index_cache)) {
    try {
      Index cached = Index::load(config.index_cache, corpus);
      if (cached.backend_name() == embedder->backend_name() &&
          cached.render_style() == config.render_style) {
        outcome.messages.push_back("index cache hit: " + config.index_cache);
        outcome.succeeded = 1;
        return outcome;
      }
      outcome.messages.push_back("index cache was built with different settings, rebuilding");
    } catch (const Error& e) {
      outcome.messages.push_back(std::string("index cache unusable, rebuilding: ") + e.what());
    }
  }

  Index index = Index::build(corpus, *embedder, config.render_style);
  if (config.index_cache.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "config has no index_cache path to write");
  }
  index.save(config.index_cache);
  outcome.messages.push_back("index written: " + config.index_cache + " (" +
                             std::to_string(index.size()) + " tools, dim " +
                             std::to_string(index.dim()) + ")");
  outcome.succeeded = 1;
  return outcome;
}

CommandOutcome cmd_retrieve(const EngineConfig& config, const std::string& eval_path,
                            const std::string& single_query, const std::string& out_dir) {
  CommandOutcome outcome;
  ToolCorpus corpus = ToolCorpus::load(config.corpus_path);
  Retriever retriever = open_retriever(config, corpus, make_embedder(config), &outcome.messages);

  struct Job {
    std::string query_id;
    std::string user_query;
  };
  std::vector<Job> jobs;
  if (!single_query.empty()) {
    jobs.push_back({"query", single_query});
  } else {
    for (const EvalRecord& record : read_eval_records(eval_path)) {
      jobs.push_back({record.query_id, record.user_query});
    }
  }

  struct Slot {
    std::optional<Trajectory> trajectory;
    std::optional<FusedList> fused;
    std::string error;
  };
  std::vector<Slot> slots(jobs.size());

  parallel_for_ordered(jobs.size(), config.parallel, [&](std::size_t i) {
    Slot& slot = slots[i];
    try {
      std::unique_ptr<Planner> planner = make_planner(config, jobs[i].query_id);
      Trajectory trajectory =
          run_episode(*planner, retriever, corpus, jobs[i].user_query, config.episode);
      if (trajectory.stopped == StopReason::kAborted) {
        slot.error = "episode aborted: " + trajectory.abort_reason;
      } else {
        slot.fused = truncate(fuse_trajectory(trajectory, corpus, config.aggregation.method,
                                              config.aggregation.rrf_c),
                              config.metrics.k);
      }
      slot.trajectory = std::move(trajectory);
    } catch (const Error& e) {
      slot.error = e.what();
    }
  });

  fs::create_directories(out_dir);
  std::vector<Trajectory> trajectories;
  std::string fused_jsonl;
  std::string fused_tsv;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Slot& slot = slots[i];
    if (slot.trajectory) trajectories.push_back(*slot.trajectory);
    if (slot.fused) {
      fused_jsonl += fused_to_json(jobs[i].query_id, *slot.fused).dump() + "\n";
      fused_tsv += "# query_id: " + jobs[i].query_id + "\n" + fused_list_tsv(*slot.fused);
      ++outcome.succeeded;
    } else {
      ++outcome.failed;
      outcome.messages.push_back("record '" + jobs[i].query_id + "' failed: " + slot.error);
    }
  }
  write_trajectories((fs::path(out_dir) / "trajectories.jsonl").string(), trajectories);
  write_text_file((fs::path(out_dir) / "fused.jsonl").string(), fused_jsonl);
  write_text_file((fs::path(out_dir) / "fused.tsv").string(), fused_tsv);
  return outcome;
}

CommandOutcome cmd_eval(const EngineConfig& config, const std::string& fused_path,
                        const std::string& eval_path, const std::string& out_dir) {
  CommandOutcome outcome;
  std::vector<EvalRecord> records = read_eval_records(eval_path);

  std::unordered_map<std::string, std::vector<std::string>> fused_ids;
  std::ifstream in(fused_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open fused list file: " + fused_path);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json node = nlohmann::json::parse(line);
    std::vector<std::string> ids;
    for (const auto& hit : node.at("hits")) ids.push_back(hit.at("id").get<std::string>());
    fused_ids[node.at("query_id").get<std::string>()] = std::move(ids);
  }

  std::vector<std::pair<EvalRecord, RecordScore>> rows;
  for (const EvalRecord& record : records) {
    auto it = fused_ids.find(record.query_id);
    if (it == fused_ids.end()) {
      ++outcome.failed;
      outcome.messages.push_back("no fused list for record '" + record.query_id + "'");
      continue;
    }
    rows.emplace_back(record, score_record(it->second, record, config.metrics.k));
    ++outcome.succeeded;
  }

  MetricReport report = macro_average(rows, category_map(config, records), config.metrics.k);
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "report.tsv").string(), metric_report_tsv(report));
  write_text_file((fs::path(out_dir) / "report.json").string(), metric_report_json(report));
  return outcome;
}

CommandOutcome cmd_synthesize(const EngineConfig& config, const std::string& records_path,
                              const std::string& out_dir) {
  CommandOutcome outcome;
  ToolCorpus corpus = ToolCorpus::load(config.corpus_path);
  Retriever retriever = open_retriever(config, corpus, make_embedder(config), &outcome.messages);
  std::vector<SynthesisRecord> records = read_synthesis_records(records_path);

  std::vector<SynthesisResult> results(records.size());
  parallel_for_ordered(records.size(), config.parallel, [&](std::size_t i) {
    try {
      std::unique_ptr<Teacher> teacher = make_teacher(config, corpus);
      results[i] = synthesize_record(*teacher, retriever, corpus, records[i], config.synthesis);
    } catch (const Error& e) {
      results[i].drop_reason = e.what();
    }
  });

  std::vector<SftTranscript> transcripts;
  std::string audit = audit_tsv_header();
  for (std::size_t i = 0; i < records.size(); ++i) {
    SynthesisResult& result = results[i];
    for (const SubTaskAudit& row : result.audits) audit += audit_tsv_row(row);
    for (const std::string& warning : result.warnings) {
      outcome.messages.push_back("record '" + records[i].record_id + "': " + warning);
    }
    if (result.transcript) {
      transcripts.push_back(std::move(*result.transcript));
      ++outcome.succeeded;
    } else {
      ++outcome.failed;
      outcome.messages.push_back("record '" + records[i].record_id +
                                 "' dropped: " + result.drop_reason);
    }
  }

  fs::create_directories(out_dir);
  emit_sft_dataset(transcripts, (fs::path(out_dir) / "sft.jsonl").string());
  write_text_file((fs::path(out_dir) / "audit.tsv").string(), audit);
  return outcome;
}

CommandOutcome cmd_reward(const EngineConfig& config, const std::string& trajectory_path,
                          const std::string& eval_path, const std::string& out_dir) {
  CommandOutcome outcome;
  ToolCorpus corpus = ToolCorpus::load(config.corpus_path);
  Retriever retriever = open_retriever(config, corpus, make_embedder(config), &outcome.messages);
  std::vector<Trajectory> trajectories = read_trajectories(trajectory_path);
  std::vector<EvalRecord> records = read_eval_records(eval_path);

  std::unordered_map<std::string, const EvalRecord*> by_query;
  for (const EvalRecord& record : records) {
    by_query.emplace(record.user_query, &record);
  }

  std::string audit_jsonl;
  for (const Trajectory& trajectory : trajectories) {
    auto it = by_query.find(trajectory.user_query);
    if (it == by_query.end()) {
      ++outcome.failed;
      outcome.messages.push_back("no eval record matches trajectory query: " +
                                 trajectory.user_query);
      continue;
    }
    const EvalRecord& record = *it->second;
    try {
      FusedList fused = fuse_trajectory(trajectory, corpus, config.aggregation.method,
                                        config.aggregation.rrf_c);
      const std::string& reference_plan =
          record.plan.empty() ? trajectory.plan.breakdown : record.plan;
      RetrievalRun baseline =
          baseline_run(retriever, trajectory.user_query, reference_plan, config.reward.k);

      std::vector<std::string> baseline_ids;
      for (const RetrievalHit& hit : baseline.hits) baseline_ids.push_back(hit.tool_id);
      std::vector<std::string> fused_ids = fused.ids();

      RewardComponents components;
      std::tie(components.delta_ndcg, components.delta_recall) =
          retrieval_reward(fused_ids, baseline_ids, record.targets, config.reward.k);

      std::vector<std::string> turns;
      turns.push_back(serialize_planner_action(trajectory.plan));
      for (const EpisodeTurn& turn : trajectory.turns) {
        turns.push_back(serialize_planner_action(turn.action));
      }
      if (trajectory.stopped == StopReason::kExplicitStop) {
        turns.push_back(serialize_planner_action(StopAction{}));
      }
      std::tie(components.format_fraction, components.stop_flag) = format_reward(turns);

      if (!record.plan.empty() && !trajectory.plan.breakdown.empty()) {
        components.plan_similarity =
            plan_reward(trajectory.plan.breakdown, record.plan, retriever.embedder());
      }

      RewardBreakdown breakdown = total_reward(components, config.reward.weights);

      ordered_json node = ordered_json::object();
      node["query_id"] = record.query_id;
      node["delta_ndcg"] = breakdown.delta_ndcg;
      node["delta_recall"] = breakdown.delta_recall;
      node["format_fraction"] = breakdown.format_fraction;
      node["stop_flag"] = breakdown.stop_flag;
      node["plan_similarity"] = breakdown.plan_similarity;
      node["total"] = breakdown.total;
      if (fused_ids.size() > config.reward.k) fused_ids.resize(config.reward.k);
      if (baseline_ids.size() > config.reward.k) baseline_ids.resize(config.reward.k);
      node["fused_ids"] = fused_ids;
      node["baseline_ids"] = baseline_ids;
      audit_jsonl += node.dump() + "\n";
      ++outcome.succeeded;
    } catch (const Error& e) {
      ++outcome.failed;
      outcome.messages.push_back("reward for '" + record.query_id + "' failed: " + e.what());
    }
  }

  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "rewards.jsonl").string(), audit_jsonl);
  return outcome;
}

}  // namespace toolqp
