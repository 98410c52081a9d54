#include "toolqp/aggregation.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace toolqp {

namespace {

std::size_t corpus_position(const ToolCorpus& corpus, const std::string& tool_id) {
  auto pos = corpus.position(tool_id);
  return pos ? *pos : corpus.size();
}

struct PeakEntry {
  std::size_t best_rank = std::numeric_limits<std::size_t>::max();
  std::size_t best_run = std::numeric_limits<std::size_t>::max();
  std::size_t corpus_pos = 0;
  std::size_t source_count = 0;
};

std::unordered_map<std::string, PeakEntry> peak_entries(std::span<const RetrievalRun> runs,
                                                        const ToolCorpus& corpus) {
  std::unordered_map<std::string, PeakEntry> entries;
  for (std::size_t run_index = 0; run_index < runs.size(); ++run_index) {
    for (const RetrievalHit& hit : runs[run_index].hits) {
      PeakEntry& entry = entries[hit.tool_id];
      if (entry.source_count == 0) entry.corpus_pos = corpus_position(corpus, hit.tool_id);
      ++entry.source_count;
      if (hit.rank < entry.best_rank) {
        entry.best_rank = hit.rank;
        entry.best_run = run_index;
      }
    }
  }
  return entries;
}

}  // namespace

FusionMethod fusion_method_from_string(std::string_view name) {
  if (name == "peak_rank") return FusionMethod::kPeakRank;
  if (name == "rrf") return FusionMethod::kRrf;
  if (name == "multi_view") return FusionMethod::kMultiView;
  throw Error(ErrorCode::kInvalidArgument, "unknown aggregation method: " + std::string(name));
}

std::string to_string(FusionMethod method) {
  switch (method) {
    case FusionMethod::kPeakRank: return "peak_rank";
    case FusionMethod::kRrf: return "rrf";
    case FusionMethod::kMultiView: return "multi_view";
  }
  return "peak_rank";
}

std::vector<std::string> FusedList::ids() const {
  std::vector<std::string> out;
  out.reserve(hits.size());
  for (const FusedHit& hit : hits) out.push_back(hit.tool_id);
  return out;
}

FusedList peak_rank(std::span<const RetrievalRun> runs, const ToolCorpus& corpus) {
  if (runs.empty()) throw Error(ErrorCode::kInvalidArgument, "peak_rank requires at least one run");

  auto entries = peak_entries(runs, corpus);
  std::vector<std::pair<std::string, PeakEntry>> order(entries.begin(), entries.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second.best_rank != b.second.best_rank) return a.second.best_rank < b.second.best_rank;
    if (a.second.best_run != b.second.best_run) return a.second.best_run < b.second.best_run;
    if (a.second.corpus_pos != b.second.corpus_pos) return a.second.corpus_pos < b.second.corpus_pos;
    return a.first < b.first;
  });

  FusedList fused;
  fused.method = FusionMethod::kPeakRank;
  for (const auto& [tool_id, entry] : order) {
    fused.hits.push_back(
        {tool_id, -static_cast<double>(entry.best_rank), entry.source_count});
  }
  return fused;
}

FusedList rrf(std::span<const RetrievalRun> runs, const ToolCorpus& corpus, double c) {
  if (runs.empty()) throw Error(ErrorCode::kInvalidArgument, "rrf requires at least one run");
  if (c <= 0.0) throw Error(ErrorCode::kInvalidArgument, "rrf constant must be positive");

  struct RrfEntry {
    double score = 0.0;
    std::size_t corpus_pos = 0;
    std::size_t source_count = 0;
  };
  std::unordered_map<std::string, RrfEntry> entries;
  for (const RetrievalRun& run : runs) {
    for (const RetrievalHit& hit : run.hits) {
      RrfEntry& entry = entries[hit.tool_id];
      if (entry.source_count == 0) entry.corpus_pos = corpus_position(corpus, hit.tool_id);
      ++entry.source_count;
      entry.score += 1.0 / (c + static_cast<double>(hit.rank));
    }
  }

  std::vector<std::pair<std::string, RrfEntry>> order(entries.begin(), entries.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second.score != b.second.score) return a.second.score > b.second.score;
    if (a.second.corpus_pos != b.second.corpus_pos) return a.second.corpus_pos < b.second.corpus_pos;
    return a.first < b.first;
  });

  FusedList fused;
  fused.method = FusionMethod::kRrf;
  for (const auto& [tool_id, entry] : order) {
    fused.hits.push_back({tool_id, entry.score, entry.source_count});
  }
  return fused;
}

FusedList multi_view_fusion(std::span<const LabeledRun> runs, const ToolCorpus& corpus) {
  if (runs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "multi_view_fusion requires at least one run");
  }

  // Group runs per view, keeping first-appearance view order.
  std::vector<std::string> view_order;
  std::unordered_map<std::string, std::vector<RetrievalRun>> grouped;
  for (const LabeledRun& labeled : runs) {
    auto [it, inserted] = grouped.try_emplace(labeled.view);
    if (inserted) view_order.push_back(labeled.view);
    it->second.push_back(labeled.run);
  }

  // Count sources across all runs for the output metadata.
  std::unordered_map<std::string, std::size_t> source_counts;
  for (const LabeledRun& labeled : runs) {
    for (const RetrievalHit& hit : labeled.run.hits) ++source_counts[hit.tool_id];
  }

  std::vector<std::vector<std::string>> view_lists;
  view_lists.reserve(view_order.size());
  for (const std::string& view : view_order) {
    view_lists.push_back(peak_rank(grouped[view], corpus).ids());
  }

  FusedList fused;
  fused.method = FusionMethod::kMultiView;
  std::unordered_set<std::string> emitted;
  std::vector<std::size_t> cursors(view_lists.size(), 0);
  bool progressed = true;
  while (progressed) {
    progressed = false;
    for (std::size_t v = 0; v < view_lists.size(); ++v) {
      std::size_t& cursor = cursors[v];
      while (cursor < view_lists[v].size() && emitted.count(view_lists[v][cursor])) ++cursor;
      if (cursor >= view_lists[v].size()) continue;
      const std::string& tool_id = view_lists[v][cursor++];
      emitted.insert(tool_id);
      fused.hits.push_back({tool_id, -static_cast<double>(fused.hits.size() + 1),
                            source_counts[tool_id]});
      progressed = true;
    }
  }
  return fused;
}

FusedList truncate(FusedList fused, std::size_t k) {
  if (fused.hits.size() > k) fused.hits.resize(k);
  return fused;
}

std::vector<RetrievalRun> collect_runs(const Trajectory& trajectory, bool include_anchor) {
  std::vector<RetrievalRun> runs;
  if (include_anchor && trajectory.anchor_run) runs.push_back(*trajectory.anchor_run);
  for (const EpisodeTurn& turn : trajectory.turns) runs.push_back(turn.run);
  return runs;
}

std::vector<LabeledRun> collect_labeled_runs(const Trajectory& trajectory, bool include_anchor) {
  std::vector<LabeledRun> runs;
  if (include_anchor && trajectory.anchor_run) runs.push_back({"", *trajectory.anchor_run});
  for (const EpisodeTurn& turn : trajectory.turns) {
    runs.push_back({turn.action.sub_goal_tag.value_or(""), turn.run});
  }
  return runs;
}

FusedList fuse_trajectory(const Trajectory& trajectory, const ToolCorpus& corpus,
                          FusionMethod method, double rrf_c) {
  switch (method) {
    case FusionMethod::kPeakRank: {
      auto runs = collect_runs(trajectory);
      return peak_rank(runs, corpus);
    }
    case FusionMethod::kRrf: {
      auto runs = collect_runs(trajectory);
      return rrf(runs, corpus, rrf_c);
    }
    case FusionMethod::kMultiView: {
      auto runs = collect_labeled_runs(trajectory);
      return multi_view_fusion(runs, corpus);
    }
  }
  throw Error(ErrorCode::kInternal, "unreachable fusion method");
}

std::string fused_list_tsv(const FusedList& fused) {
  std::string out = "rank\ttool_id\tfused_score\tsource_count\n";
  char buffer[64];
  for (std::size_t i = 0; i < fused.hits.size(); ++i) {
    const FusedHit& hit = fused.hits[i];
    std::snprintf(buffer, sizeof(buffer), "%.10g", hit.fused_score);
    out += std::to_string(i + 1) + "\t" + hit.tool_id + "\t" + buffer + "\t" +
           std::to_string(hit.source_count) + "\n";
  }
  return out;
}

}  // namespace toolqp
