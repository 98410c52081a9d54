#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "toolqp/error.hpp"

namespace toolqp {

// One benchmark instance: a user query with its ground-truth tool set.
struct EvalRecord {
  std::string query_id;
  std::string user_query;
  std::set<std::string> targets;
  std::string dataset;
  std::string category;  // Web / Code / Custom or free string
  std::string plan;      // optional reference plan, used by reward scoring
};

std::vector<EvalRecord> read_eval_records(const std::string& path);

// nDCG with binary gains and the 1/log2(i+1) discount, 1-based ranks.
double ndcg_at_k(std::span<const std::string> ranked, const std::set<std::string>& targets,
                 std::size_t k);

double recall_at_k(std::span<const std::string> ranked, const std::set<std::string>& targets,
                   std::size_t k);

// 1 iff every target appears in the top k (exact, not tolerance-based).
int completeness_at_k(std::span<const std::string> ranked, const std::set<std::string>& targets,
                      std::size_t k);

struct RecordScore {
  double ndcg = 0.0;
  double recall = 0.0;
  int completeness = 0;
};

struct Aggregate {
  double ndcg = 0.0;
  double recall = 0.0;
  double completeness = 0.0;
  std::size_t count = 0;  // records for datasets, datasets for categories
};

struct MetricReport {
  std::size_t k = 10;
  std::map<std::string, RecordScore> per_record;          // query_id -> score
  std::map<std::string, std::string> record_dataset;       // query_id -> dataset
  std::map<std::string, Aggregate> per_dataset;
  std::map<std::string, Aggregate> per_category;
  Aggregate overall;  // mean over categories
};

RecordScore score_record(std::span<const std::string> ranked, const EvalRecord& record,
                         std::size_t k);

// Per-dataset means over records, per-category means over dataset means
// (each dataset weighted equally), overall mean over categories.
MetricReport macro_average(const std::vector<std::pair<EvalRecord, RecordScore>>& rows,
                           const std::map<std::string, std::string>& dataset_category,
                           std::size_t k);

std::string metric_report_tsv(const MetricReport& report);
std::string metric_report_json(const MetricReport& report);

}  // namespace toolqp
