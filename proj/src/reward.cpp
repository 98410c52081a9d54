#include "toolqp/reward.hpp"

#include "toolqp/planner.hpp"

namespace toolqp {

RetrievalRun baseline_run(const Retriever& retriever, const std::string& user_query,
                          const std::string& plan_text, std::size_t k) {
  if (user_query.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "baseline run requires a non-empty user query");
  }
  const std::string text = plan_text.empty() ? user_query : user_query + "\n" + plan_text;
  return retriever.search(text, k);
}

std::pair<double, double> retrieval_reward(std::span<const std::string> fused_ids,
                                           std::span<const std::string> baseline_ids,
                                           const std::set<std::string>& targets, std::size_t k) {
  const double delta_ndcg =
      ndcg_at_k(fused_ids, targets, k) - ndcg_at_k(baseline_ids, targets, k);
  const double delta_recall =
      recall_at_k(fused_ids, targets, k) - recall_at_k(baseline_ids, targets, k);
  return {delta_ndcg, delta_recall};
}

std::pair<double, int> format_reward(std::span<const std::string> raw_assistant_turns) {
  if (raw_assistant_turns.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "format reward requires at least one assistant turn");
  }
  std::size_t parseable = 0;
  bool last_is_stop = false;
  for (std::size_t i = 0; i < raw_assistant_turns.size(); ++i) {
    try {
      PlannerAction action = parse_planner_turn(raw_assistant_turns[i], i);
      ++parseable;
      if (i + 1 == raw_assistant_turns.size()) last_is_stop = is_stop(action);
    } catch (const Error&) {
      // malformed turn; counts against the fraction
    }
  }
  const double fraction =
      static_cast<double>(parseable) / static_cast<double>(raw_assistant_turns.size());
  return {fraction, last_is_stop ? 1 : 0};
}

double plan_reward(const std::string& predicted_plan, const std::string& reference_plan,
                   Embedder& embedder) {
  if (predicted_plan.empty() || reference_plan.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "plan reward requires two non-empty plans");
  }
  auto vectors = embedder.embed_batch({predicted_plan, reference_plan});
  return cosine_similarity(vectors[0], vectors[1]);
}

RewardBreakdown total_reward(const RewardComponents& components, const RewardWeights& weights) {
  RewardBreakdown breakdown;
  static_cast<RewardComponents&>(breakdown) = components;
  breakdown.total = weights.b1_n * components.delta_ndcg +
                    weights.b1_r * components.delta_recall +
                    weights.b2_f * components.format_fraction +
                    weights.b2_s * static_cast<double>(components.stop_flag) +
                    weights.b3 * components.plan_similarity;
  return breakdown;
}

}  // namespace toolqp
