#pragma once

#include <span>
#include <string>
#include <vector>

#include "toolqp/corpus.hpp"
#include "toolqp/episode.hpp"
#include "toolqp/retriever.hpp"

namespace toolqp {

enum class FusionMethod { kPeakRank, kRrf, kMultiView };

FusionMethod fusion_method_from_string(std::string_view name);
std::string to_string(FusionMethod method);

struct FusedHit {
  std::string tool_id;
  double fused_score = 0.0;
  std::size_t source_count = 0;  // runs the tool appeared in

  bool operator==(const FusedHit& other) const {
    return tool_id == other.tool_id && fused_score == other.fused_score &&
           source_count == other.source_count;
  }
};

struct FusedList {
  std::vector<FusedHit> hits;
  FusionMethod method = FusionMethod::kPeakRank;

  std::vector<std::string> ids() const;
};

// Each unique tool keyed by the best (minimum) rank it achieved in any run.
// Ties break by the earliest run achieving that rank, then corpus order.
// fused_score is the negated key so higher still means better.
FusedList peak_rank(std::span<const RetrievalRun> runs, const ToolCorpus& corpus);

// Reciprocal rank fusion: score = sum over runs of 1/(c + rank).
FusedList rrf(std::span<const RetrievalRun> runs, const ToolCorpus& corpus, double c = 60.0);

struct LabeledRun {
  std::string view;  // sub-goal tag; untagged runs share the empty view
  RetrievalRun run;
};

// Peak-rank within each view, then round-robin interleave across views in
// first-appearance order, each view contributing its next unseen tool.
FusedList multi_view_fusion(std::span<const LabeledRun> runs, const ToolCorpus& corpus);

FusedList truncate(FusedList fused, std::size_t k);

// Runs of a trajectory in episode order, anchor run (when present) first.
std::vector<RetrievalRun> collect_runs(const Trajectory& trajectory, bool include_anchor = true);
std::vector<LabeledRun> collect_labeled_runs(const Trajectory& trajectory,
                                             bool include_anchor = true);

FusedList fuse_trajectory(const Trajectory& trajectory, const ToolCorpus& corpus,
                          FusionMethod method, double rrf_c = 60.0);

// TSV rows: rank, tool_id, fused_score, source_count.
std::string fused_list_tsv(const FusedList& fused);

}  // namespace toolqp
