/* C interface to the toolqp engine: opaque handles, status codes, and
 * JSON-carrying strings. Every char* returned through an out-parameter is
 * heap-allocated and must be released with tqp_string_free(). On any status
 * other than TQP_OK / TQP_PARTIAL, tqp_last_error() describes the failure
 * (thread-local). */
#ifndef TOOLQP_H
#define TOOLQP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tqp_status {
  TQP_OK = 0,
  TQP_PARTIAL = 1, /* command finished but some records failed */
  TQP_ERR_IO = 2,
  TQP_ERR_PARSE = 3,
  TQP_ERR_INVALID = 4,
  TQP_ERR_BACKEND = 5,
  TQP_ERR_PROTOCOL = 6,
  TQP_ERR_INTERNAL = 7
} tqp_status;

typedef struct tqp_corpus tqp_corpus;
typedef struct tqp_index tqp_index;

const char* tqp_version(void);

/* Message for the most recent failure on this thread; empty when none. */
const char* tqp_last_error(void);

void tqp_string_free(char* text);

/* ---- corpus ---------------------------------------------------------- */

tqp_status tqp_corpus_load(const char* path, tqp_corpus** out);
void tqp_corpus_free(tqp_corpus* corpus);
int64_t tqp_corpus_size(const tqp_corpus* corpus);

/* style: "schema_json" | "name_desc" | "feedback_line" */
tqp_status tqp_corpus_render_tool(const tqp_corpus* corpus, const char* tool_id,
                                  const char* style, char** out);

/* ---- index & search --------------------------------------------------- */

/* embedder_json: {"backend":"hash","dim":256,"seed":0,...} as in the config
 * file's "embedder" section. render_style as above. */
tqp_status tqp_index_build(const tqp_corpus* corpus, const char* embedder_json,
                           const char* render_style, tqp_index** out);
tqp_status tqp_index_save(const tqp_index* index, const char* path);
tqp_status tqp_index_load(const char* path, const tqp_corpus* corpus, const char* embedder_json,
                          tqp_index** out);
void tqp_index_free(tqp_index* index);

/* run_json out: {"query":..., "hits":[{"id":...,"score":...,"rank":...}]} */
tqp_status tqp_search(const tqp_index* index, const char* query, int k, char** run_json);
tqp_status tqp_search_bm25(const tqp_corpus* corpus, const char* query, int k, char** run_json);

/* ---- aggregation ------------------------------------------------------- */

/* runs_json: JSON list of run objects (optionally with a "view" key for
 * multi_view). method: "peak_rank" | "rrf" | "multi_view". fused_json out:
 * {"method":..., "hits":[{"id","score","source_count"}]} */
tqp_status tqp_fuse(const tqp_corpus* corpus, const char* runs_json, const char* method,
                    double rrf_c, char** fused_json);

/* ---- metrics ----------------------------------------------------------- */

tqp_status tqp_ndcg_at_k(const char* const* ranked, size_t ranked_len, const char* const* targets,
                         size_t targets_len, size_t k, double* out);
tqp_status tqp_recall_at_k(const char* const* ranked, size_t ranked_len,
                           const char* const* targets, size_t targets_len, size_t k, double* out);
tqp_status tqp_completeness_at_k(const char* const* ranked, size_t ranked_len,
                                 const char* const* targets, size_t targets_len, size_t k,
                                 int* out);

/* ---- reward ------------------------------------------------------------ */

/* weights_json: {"b1_n":5.0,"b1_r":2.5,"b2_f":1.5,"b2_s":0.6,"b3":1.0};
 * NULL selects the defaults. breakdown_json out carries every component and
 * the weighted total. */
tqp_status tqp_reward_total(double delta_ndcg, double delta_recall, double format_fraction,
                            int stop_flag, double plan_similarity, const char* weights_json,
                            char** breakdown_json);

/* ---- commands (the CLI surface) ---------------------------------------- */

/* config_json is the full engine config document (see README). */
tqp_status tqp_cmd_index(const char* config_json, char** report);
tqp_status tqp_cmd_retrieve(const char* config_json, const char* eval_path,
                            const char* single_query, const char* out_dir, char** report);
tqp_status tqp_cmd_eval(const char* config_json, const char* fused_path, const char* eval_path,
                        const char* out_dir, char** report);
tqp_status tqp_cmd_synthesize(const char* config_json, const char* records_path,
                              const char* out_dir, char** report);
tqp_status tqp_cmd_reward(const char* config_json, const char* trajectory_path,
                          const char* eval_path, const char* out_dir, char** report);

#ifdef __cplusplus
}
#endif

#endif /* TOOLQP_H */
