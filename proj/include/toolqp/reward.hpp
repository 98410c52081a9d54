#pragma once

#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "toolqp/embedder.hpp"
#include "toolqp/metrics.hpp"
#include "toolqp/retriever.hpp"

namespace toolqp {

struct RewardWeights {
  double b1_n = 5.0;  // nDCG delta
  double b1_r = 2.5;  // recall delta
  double b2_f = 1.5;  // formatting fraction
  double b2_s = 0.6;  // stop-token flag
  double b3 = 1.0;    // plan similarity
};

struct RewardComponents {
  double delta_ndcg = 0.0;
  double delta_recall = 0.0;
  double format_fraction = 0.0;  // in [0,1]
  int stop_flag = 0;             // 0|1
  double plan_similarity = 0.0;  // in [-1,1]
};

struct RewardBreakdown : RewardComponents {
  double total = 0.0;
};

// Single search with the user query and plan concatenated (newline separator);
// an empty plan degrades to the query alone.
RetrievalRun baseline_run(const Retriever& retriever, const std::string& user_query,
                          const std::string& plan_text, std::size_t k);

// (delta nDCG@k, delta recall@k) of the fused list against the baseline run.
std::pair<double, double> retrieval_reward(std::span<const std::string> fused_ids,
                                           std::span<const std::string> baseline_ids,
                                           const std::set<std::string>& targets,
                                           std::size_t k = 5);

// Fraction of assistant turns that parse under the positional turn rules, and
// whether the final turn is the stop tag.
std::pair<double, int> format_reward(std::span<const std::string> raw_assistant_turns);

// Cosine similarity of the two plan texts under the given embedder.
double plan_reward(const std::string& predicted_plan, const std::string& reference_plan,
                   Embedder& embedder);

RewardBreakdown total_reward(const RewardComponents& components, const RewardWeights& weights);

}  // namespace toolqp
