#include "toolqp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

void require_targets(const std::set<std::string>& targets) {
  if (targets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "metric requires a non-empty target set");
  }
}

std::size_t hits_in_top_k(std::span<const std::string> ranked,
                          const std::set<std::string>& targets, std::size_t k) {
  std::size_t hits = 0;
  const std::size_t take = std::min(k, ranked.size());
  for (std::size_t i = 0; i < take; ++i) {
    if (targets.count(ranked[i])) ++hits;
  }
  return hits;
}

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.6f", value);
  return buffer;
}

}  // namespace

std::vector<EvalRecord> read_eval_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open eval file: " + path);

  std::vector<EvalRecord> records;
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
      throw Error(ErrorCode::kParse, "malformed eval record on line " +
                                         std::to_string(line_number) + ": " + e.what());
    }
    EvalRecord record;
    record.query_id = node.contains("query_id") ? node["query_id"].get<std::string>()
                                                : "q" + std::to_string(line_number);
    record.user_query = node.at("query").get<std::string>();
    for (const auto& target : node.at("target_tool_ids")) {
      record.targets.insert(target.get<std::string>());
    }
    if (record.targets.empty()) {
      throw Error(ErrorCode::kParse,
                  "eval record on line " + std::to_string(line_number) + " has no targets");
    }
    record.dataset = node.contains("dataset") ? node["dataset"].get<std::string>() : "default";
    if (node.contains("category")) record.category = node["category"].get<std::string>();
    if (node.contains("plan")) record.plan = node["plan"].get<std::string>();
    records.push_back(std::move(record));
  }
  return records;
}

double ndcg_at_k(std::span<const std::string> ranked, const std::set<std::string>& targets,
                 std::size_t k) {
  require_targets(targets);
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "metric requires k >= 1");

  double dcg = 0.0;
  const std::size_t take = std::min(k, ranked.size());
  for (std::size_t i = 0; i < take; ++i) {
    if (targets.count(ranked[i])) {
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, targets.size());
  for (std::size_t i = 0; i < ideal; ++i) {
    idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / idcg;
}

double recall_at_k(std::span<const std::string> ranked, const std::set<std::string>& targets,
                   std::size_t k) {
  require_targets(targets);
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "metric requires k >= 1");
  return static_cast<double>(hits_in_top_k(ranked, targets, k)) /
         static_cast<double>(targets.size());
}

int completeness_at_k(std::span<const std::string> ranked, const std::set<std::string>& targets,
                      std::size_t k) {
  require_targets(targets);
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "metric requires k >= 1");
  return hits_in_top_k(ranked, targets, k) == targets.size() ? 1 : 0;
}

RecordScore score_record(std::span<const std::string> ranked, const EvalRecord& record,
                         std::size_t k) {
  RecordScore score;
  score.ndcg = ndcg_at_k(ranked, record.targets, k);
  score.recall = recall_at_k(ranked, record.targets, k);
  score.completeness = completeness_at_k(ranked, record.targets, k);
  return score;
}

MetricReport macro_average(const std::vector<std::pair<EvalRecord, RecordScore>>& rows,
                           const std::map<std::string, std::string>& dataset_category,
                           std::size_t k) {
  MetricReport report;
  report.k = k;

  std::map<std::string, Aggregate> dataset_sums;
  for (const auto& [record, score] : rows) {
    report.per_record[record.query_id] = score;
    report.record_dataset[record.query_id] = record.dataset;
    Aggregate& sum = dataset_sums[record.dataset];
    sum.ndcg += score.ndcg;
    sum.recall += score.recall;
    sum.completeness += score.completeness;
    ++sum.count;
  }

  std::map<std::string, Aggregate> category_sums;
  for (auto& [dataset, sum] : dataset_sums) {
    auto it = dataset_category.find(dataset);
    if (it == dataset_category.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "dataset '" + dataset + "' has no category mapping");
    }
    Aggregate mean;
    mean.count = sum.count;
    mean.ndcg = sum.ndcg / static_cast<double>(sum.count);
    mean.recall = sum.recall / static_cast<double>(sum.count);
    mean.completeness = sum.completeness / static_cast<double>(sum.count);
    report.per_dataset[dataset] = mean;

    Aggregate& cat = category_sums[it->second];
    cat.ndcg += mean.ndcg;
    cat.recall += mean.recall;
    cat.completeness += mean.completeness;
    ++cat.count;  // datasets weighted equally within the category
  }

  Aggregate overall_sum;
  for (auto& [category, sum] : category_sums) {
    Aggregate mean;
    mean.count = sum.count;
    mean.ndcg = sum.ndcg / static_cast<double>(sum.count);
    mean.recall = sum.recall / static_cast<double>(sum.count);
    mean.completeness = sum.completeness / static_cast<double>(sum.count);
    report.per_category[category] = mean;

    overall_sum.ndcg += mean.ndcg;
    overall_sum.recall += mean.recall;
    overall_sum.completeness += mean.completeness;
    ++overall_sum.count;
  }
  if (overall_sum.count > 0) {
    report.overall.count = overall_sum.count;
    report.overall.ndcg = overall_sum.ndcg / static_cast<double>(overall_sum.count);
    report.overall.recall = overall_sum.recall / static_cast<double>(overall_sum.count);
    report.overall.completeness =
        overall_sum.completeness / static_cast<double>(overall_sum.count);
  }
  return report;
}

std::string metric_report_tsv(const MetricReport& report) {
  std::string out = "row_type\tkey\tK\tndcg\trecall\tcompleteness\tcount\n";
  for (const auto& [query_id, score] : report.per_record) {
    out += "record\t" + query_id + "\t" + std::to_string(report.k) + "\t" +
           format_double(score.ndcg) + "\t" + format_double(score.recall) + "\t" +
           std::to_string(score.completeness) + "\t1\n";
  }
  for (const auto& [dataset, agg] : report.per_dataset) {
    out += "dataset\t" + dataset + "\t" + std::to_string(report.k) + "\t" +
           format_double(agg.ndcg) + "\t" + format_double(agg.recall) + "\t" +
           format_double(agg.completeness) + "\t" + std::to_string(agg.count) + "\n";
  }
  for (const auto& [category, agg] : report.per_category) {
    out += "category\t" + category + "\t" + std::to_string(report.k) + "\t" +
           format_double(agg.ndcg) + "\t" + format_double(agg.recall) + "\t" +
           format_double(agg.completeness) + "\t" + std::to_string(agg.count) + "\n";
  }
  out += "overall\tmacro\t" + std::to_string(report.k) + "\t" + format_double(report.overall.ndcg) +
         "\t" + format_double(report.overall.recall) + "\t" +
         format_double(report.overall.completeness) + "\t" + std::to_string(report.overall.count) +
         "\n";
  return out;
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::ordered_json node;
  node["K"] = report.k;
  auto& categories = node["categories"] = nlohmann::ordered_json::object();
  for (const auto& [category, agg] : report.per_category) {
    categories[category] = {{"ndcg", agg.ndcg},
                            {"recall", agg.recall},
                            {"completeness", agg.completeness},
                            {"datasets", agg.count}};
  }
  auto& datasets = node["datasets"] = nlohmann::ordered_json::object();
  for (const auto& [dataset, agg] : report.per_dataset) {
    datasets[dataset] = {{"ndcg", agg.ndcg},
                         {"recall", agg.recall},
                         {"completeness", agg.completeness},
                         {"records", agg.count}};
  }
  node["macro_avg"] = {{"ndcg", report.overall.ndcg},
                       {"recall", report.overall.recall},
                       {"completeness", report.overall.completeness},
                       {"categories", report.overall.count}};
  return node.dump(2);
}

}  // namespace toolqp
