#include "toolqp.h"

#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "toolqp/aggregation.hpp"
#include "toolqp/corpus.hpp"
#include "toolqp/engine.hpp"
#include "toolqp/metrics.hpp"
#include "toolqp/retriever.hpp"
#include "toolqp/reward.hpp"

using namespace toolqp;

namespace {

thread_local std::string g_last_error;

struct CorpusHandle {
  ToolCorpus corpus;
};

struct IndexHandle {
  Index index;
  std::shared_ptr<Embedder> embedder;
};

tqp_status status_from(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return TQP_ERR_IO;
    case ErrorCode::kParse: return TQP_ERR_PARSE;
    case ErrorCode::kInvalidArgument: return TQP_ERR_INVALID;
    case ErrorCode::kBackend: return TQP_ERR_BACKEND;
    case ErrorCode::kProtocol: return TQP_ERR_PROTOCOL;
    case ErrorCode::kInternal: return TQP_ERR_INTERNAL;
  }
  return TQP_ERR_INTERNAL;
}

char* copy_string(const std::string& text) {
  char* out = static_cast<char*>(std::malloc(text.size() + 1));
  if (out) std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

template <typename Fn>
tqp_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TQP_ERR_INTERNAL;
  }
}

std::shared_ptr<Embedder> embedder_from_json(const char* embedder_json) {
  EngineConfig config;
  if (embedder_json && *embedder_json) {
    nlohmann::json node;
    node["embedder"] = nlohmann::json::parse(embedder_json);
    config = EngineConfig::from_json(node);
  }
  return make_embedder(config);
}

nlohmann::json run_to_json(const RetrievalRun& run) {
  nlohmann::json node;
  node["query"] = run.query_text;
  auto& hits = node["hits"] = nlohmann::json::array();
  for (const RetrievalHit& hit : run.hits) {
    hits.push_back({{"id", hit.tool_id}, {"score", hit.score}, {"rank", hit.rank}});
  }
  return node;
}

RetrievalRun run_from_json(const nlohmann::json& node) {
  RetrievalRun run;
  if (node.contains("query")) run.query_text = node["query"].get<std::string>();
  for (const auto& hit : node.at("hits")) {
    run.hits.push_back({hit.at("id").get<std::string>(),
                        hit.contains("score") ? hit["score"].get<double>() : 0.0,
                        hit.at("rank").get<std::size_t>()});
  }
  return run;
}

std::set<std::string> to_set(const char* const* items, size_t len) {
  std::set<std::string> out;
  for (size_t i = 0; i < len; ++i) out.insert(items[i]);
  return out;
}

std::vector<std::string> to_vector(const char* const* items, size_t len) {
  std::vector<std::string> out;
  out.reserve(len);
  for (size_t i = 0; i < len; ++i) out.emplace_back(items[i]);
  return out;
}

tqp_status outcome_status(const CommandOutcome& outcome, char** report) {
  if (report) {
    nlohmann::ordered_json node;
    node["succeeded"] = outcome.succeeded;
    node["failed"] = outcome.failed;
    node["messages"] = outcome.messages;
    *report = copy_string(node.dump());
  }
  if (outcome.exit_code() == 1) return TQP_PARTIAL;
  if (outcome.exit_code() == 2) {
    g_last_error = "all records failed";
    for (const std::string& message : outcome.messages) {
      g_last_error += "\n" + message;
    }
    return TQP_ERR_BACKEND;
  }
  return TQP_OK;
}

EngineConfig parse_config(const char* config_json) {
  if (!config_json || !*config_json) {
    throw Error(ErrorCode::kInvalidArgument, "config JSON is required");
  }
  nlohmann::json node;
  try {
    node = nlohmann::json::parse(config_json);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, std::string("config JSON: ") + e.what());
  }
  return EngineConfig::from_json(node);
}

}  // namespace

extern "C" {

const char* tqp_version(void) { return "0.1.0"; }

const char* tqp_last_error(void) { return g_last_error.c_str(); }

void tqp_string_free(char* text) { std::free(text); }

tqp_status tqp_corpus_load(const char* path, tqp_corpus** out) {
  return guarded([&]() -> tqp_status {
    if (!path || !out) throw Error(ErrorCode::kInvalidArgument, "path and out are required");
    auto handle = std::make_unique<CorpusHandle>();
    handle->corpus = ToolCorpus::load(path);
    *out = reinterpret_cast<tqp_corpus*>(handle.release());
    return TQP_OK;
  });
}

void tqp_corpus_free(tqp_corpus* corpus) { delete reinterpret_cast<CorpusHandle*>(corpus); }

int64_t tqp_corpus_size(const tqp_corpus* corpus) {
  if (!corpus) return -1;
  return static_cast<int64_t>(reinterpret_cast<const CorpusHandle*>(corpus)->corpus.size());
}

tqp_status tqp_corpus_render_tool(const tqp_corpus* corpus, const char* tool_id,
                                  const char* style, char** out) {
  return guarded([&]() -> tqp_status {
    if (!corpus || !tool_id || !style || !out) {
      throw Error(ErrorCode::kInvalidArgument, "corpus, tool_id, style and out are required");
    }
    const ToolCorpus& tools = reinterpret_cast<const CorpusHandle*>(corpus)->corpus;
    const ToolDoc* tool = tools.find(tool_id);
    if (!tool) throw Error(ErrorCode::kInvalidArgument, std::string("unknown tool: ") + tool_id);
    *out = copy_string(render_tool_doc(*tool, render_style_from_string(style)));
    return TQP_OK;
  });
}

tqp_status tqp_index_build(const tqp_corpus* corpus, const char* embedder_json,
                           const char* render_style, tqp_index** out) {
  return guarded([&]() -> tqp_status {
    if (!corpus || !out) throw Error(ErrorCode::kInvalidArgument, "corpus and out are required");
    const ToolCorpus& tools = reinterpret_cast<const CorpusHandle*>(corpus)->corpus;
    auto handle = std::make_unique<IndexHandle>();
    handle->embedder = embedder_from_json(embedder_json);
    RenderStyle style = render_style && *render_style ? render_style_from_string(render_style)
                                                      : RenderStyle::kSchemaJson;
    handle->index = Index::build(tools, *handle->embedder, style);
    *out = reinterpret_cast<tqp_index*>(handle.release());
    return TQP_OK;
  });
}

tqp_status tqp_index_save(const tqp_index* index, const char* path) {
  return guarded([&]() -> tqp_status {
    if (!index || !path) throw Error(ErrorCode::kInvalidArgument, "index and path are required");
    reinterpret_cast<const IndexHandle*>(index)->index.save(path);
    return TQP_OK;
  });
}

tqp_status tqp_index_load(const char* path, const tqp_corpus* corpus, const char* embedder_json,
                          tqp_index** out) {
  return guarded([&]() -> tqp_status {
    if (!path || !corpus || !out) {
      throw Error(ErrorCode::kInvalidArgument, "path, corpus and out are required");
    }
    const ToolCorpus& tools = reinterpret_cast<const CorpusHandle*>(corpus)->corpus;
    auto handle = std::make_unique<IndexHandle>();
    handle->embedder = embedder_from_json(embedder_json);
    handle->index = Index::load(path, tools);
    if (handle->index.backend_name() != handle->embedder->backend_name()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "index backend '" + handle->index.backend_name() +
                      "' does not match the configured embedder '" +
                      handle->embedder->backend_name() + "'");
    }
    *out = reinterpret_cast<tqp_index*>(handle.release());
    return TQP_OK;
  });
}

void tqp_index_free(tqp_index* index) { delete reinterpret_cast<IndexHandle*>(index); }

tqp_status tqp_search(const tqp_index* index, const char* query, int k, char** run_json) {
  return guarded([&]() -> tqp_status {
    if (!index || !query || !run_json || k < 1) {
      throw Error(ErrorCode::kInvalidArgument, "index, query, k >= 1 and out are required");
    }
    const IndexHandle* handle = reinterpret_cast<const IndexHandle*>(index);
    RetrievalRun run =
        handle->index.search(query, static_cast<std::size_t>(k), *handle->embedder);
    *run_json = copy_string(run_to_json(run).dump());
    return TQP_OK;
  });
}

tqp_status tqp_search_bm25(const tqp_corpus* corpus, const char* query, int k, char** run_json) {
  return guarded([&]() -> tqp_status {
    if (!corpus || !query || !run_json || k < 1) {
      throw Error(ErrorCode::kInvalidArgument, "corpus, query, k >= 1 and out are required");
    }
    const ToolCorpus& tools = reinterpret_cast<const CorpusHandle*>(corpus)->corpus;
    RetrievalRun run = search_bm25(tools, query, static_cast<std::size_t>(k));
    *run_json = copy_string(run_to_json(run).dump());
    return TQP_OK;
  });
}

tqp_status tqp_fuse(const tqp_corpus* corpus, const char* runs_json, const char* method,
                    double rrf_c, char** fused_json) {
  return guarded([&]() -> tqp_status {
    if (!corpus || !runs_json || !method || !fused_json) {
      throw Error(ErrorCode::kInvalidArgument, "corpus, runs, method and out are required");
    }
    const ToolCorpus& tools = reinterpret_cast<const CorpusHandle*>(corpus)->corpus;
    nlohmann::json list;
    try {
      list = nlohmann::json::parse(runs_json);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParse, std::string("runs JSON: ") + e.what());
    }
    if (!list.is_array()) throw Error(ErrorCode::kParse, "runs JSON must be a list");

    FusionMethod fusion = fusion_method_from_string(method);
    FusedList fused;
    if (fusion == FusionMethod::kMultiView) {
      std::vector<LabeledRun> runs;
      for (const auto& node : list) {
        runs.push_back({node.contains("view") ? node["view"].get<std::string>() : "",
                        run_from_json(node)});
      }
      fused = multi_view_fusion(runs, tools);
    } else {
      std::vector<RetrievalRun> runs;
      for (const auto& node : list) runs.push_back(run_from_json(node));
      fused = fusion == FusionMethod::kPeakRank ? peak_rank(runs, tools)
                                                : rrf(runs, tools, rrf_c);
    }

    nlohmann::json node;
    node["method"] = to_string(fused.method);
    auto& hits = node["hits"] = nlohmann::json::array();
    for (const FusedHit& hit : fused.hits) {
      hits.push_back(
          {{"id", hit.tool_id}, {"score", hit.fused_score}, {"source_count", hit.source_count}});
    }
    *fused_json = copy_string(node.dump());
    return TQP_OK;
  });
}

tqp_status tqp_ndcg_at_k(const char* const* ranked, size_t ranked_len, const char* const* targets,
                         size_t targets_len, size_t k, double* out) {
  return guarded([&]() -> tqp_status {
    if (!out) throw Error(ErrorCode::kInvalidArgument, "out is required");
    *out = ndcg_at_k(to_vector(ranked, ranked_len), to_set(targets, targets_len), k);
    return TQP_OK;
  });
}

tqp_status tqp_recall_at_k(const char* const* ranked, size_t ranked_len,
                           const char* const* targets, size_t targets_len, size_t k, double* out) {
  return guarded([&]() -> tqp_status {
    if (!out) throw Error(ErrorCode::kInvalidArgument, "out is required");
    *out = recall_at_k(to_vector(ranked, ranked_len), to_set(targets, targets_len), k);
    return TQP_OK;
  });
}

tqp_status tqp_completeness_at_k(const char* const* ranked, size_t ranked_len,
                                 const char* const* targets, size_t targets_len, size_t k,
                                 int* out) {
  return guarded([&]() -> tqp_status {
    if (!out) throw Error(ErrorCode::kInvalidArgument, "out is required");
    *out = completeness_at_k(to_vector(ranked, ranked_len), to_set(targets, targets_len), k);
    return TQP_OK;
  });
}

tqp_status tqp_reward_total(double delta_ndcg, double delta_recall, double format_fraction,
                            int stop_flag, double plan_similarity, const char* weights_json,
                            char** breakdown_json) {
  return guarded([&]() -> tqp_status {
    if (!breakdown_json) throw Error(ErrorCode::kInvalidArgument, "out is required");
    RewardWeights weights;
    if (weights_json && *weights_json) {
      nlohmann::json node;
      try {
        node = nlohmann::json::parse(weights_json);
      } catch (const std::exception& e) {
        throw Error(ErrorCode::kParse, std::string("weights JSON: ") + e.what());
      }
      if (node.contains("b1_n")) weights.b1_n = node["b1_n"].get<double>();
      if (node.contains("b1_r")) weights.b1_r = node["b1_r"].get<double>();
      if (node.contains("b2_f")) weights.b2_f = node["b2_f"].get<double>();
      if (node.contains("b2_s")) weights.b2_s = node["b2_s"].get<double>();
      if (node.contains("b3")) weights.b3 = node["b3"].get<double>();
    }
    RewardComponents components;
    components.delta_ndcg = delta_ndcg;
    components.delta_recall = delta_recall;
    components.format_fraction = format_fraction;
    components.stop_flag = stop_flag;
    components.plan_similarity = plan_similarity;
    RewardBreakdown breakdown = total_reward(components, weights);

    nlohmann::ordered_json node;
    node["delta_ndcg"] = breakdown.delta_ndcg;
    node["delta_recall"] = breakdown.delta_recall;
    node["format_fraction"] = breakdown.format_fraction;
    node["stop_flag"] = breakdown.stop_flag;
    node["plan_similarity"] = breakdown.plan_similarity;
    node["total"] = breakdown.total;
    *breakdown_json = copy_string(node.dump());
    return TQP_OK;
  });
}

tqp_status tqp_cmd_index(const char* config_json, char** report) {
  return guarded([&]() -> tqp_status {
    return outcome_status(cmd_index(parse_config(config_json)), report);
  });
}

tqp_status tqp_cmd_retrieve(const char* config_json, const char* eval_path,
                            const char* single_query, const char* out_dir, char** report) {
  return guarded([&]() -> tqp_status {
    if (!out_dir) throw Error(ErrorCode::kInvalidArgument, "out_dir is required");
    return outcome_status(cmd_retrieve(parse_config(config_json), eval_path ? eval_path : "",
                                       single_query ? single_query : "", out_dir),
                          report);
  });
}

tqp_status tqp_cmd_eval(const char* config_json, const char* fused_path, const char* eval_path,
                        const char* out_dir, char** report) {
  return guarded([&]() -> tqp_status {
    if (!fused_path || !eval_path || !out_dir) {
      throw Error(ErrorCode::kInvalidArgument, "fused_path, eval_path and out_dir are required");
    }
    return outcome_status(cmd_eval(parse_config(config_json), fused_path, eval_path, out_dir),
                          report);
  });
}

tqp_status tqp_cmd_synthesize(const char* config_json, const char* records_path,
                              const char* out_dir, char** report) {
  return guarded([&]() -> tqp_status {
    if (!records_path || !out_dir) {
      throw Error(ErrorCode::kInvalidArgument, "records_path and out_dir are required");
    }
    return outcome_status(cmd_synthesize(parse_config(config_json), records_path, out_dir),
                          report);
  });
}

tqp_status tqp_cmd_reward(const char* config_json, const char* trajectory_path,
                          const char* eval_path, const char* out_dir, char** report) {
  return guarded([&]() -> tqp_status {
    if (!trajectory_path || !eval_path || !out_dir) {
      throw Error(ErrorCode::kInvalidArgument,
                  "trajectory_path, eval_path and out_dir are required");
    }
    return outcome_status(
        cmd_reward(parse_config(config_json), trajectory_path, eval_path, out_dir), report);
  });
}

}  // extern "C"
