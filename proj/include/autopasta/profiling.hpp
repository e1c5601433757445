#pragma once

// Head-set search strategies with exact evaluation accounting. Strategies see
// the model only through a CandidateEvaluator, so they run equally against the
// real pipeline or a synthetic landscape.

#include <autopasta/dataset.hpp>
#include <autopasta/model.hpp>
#include <autopasta/pipeline.hpp>
#include <autopasta/steering.hpp>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace autopasta {

struct ModelShape {
  int num_layers = 0;
  int num_heads = 0;
};

struct CandidateScore {
  std::string label;
  HeadSet candidate;
  double token_f1 = 0.0;  // percent
  double em = 0.0;        // percent
  std::size_t num_instances = 0;
};

struct SearchBudget {
  std::size_t evaluations_used = 0;
  std::size_t evaluations_predicted = 0;
};

/// Must be safe to call concurrently when a strategy runs with workers > 1.
using CandidateEvaluator = std::function<CandidateScore(const HeadSet&)>;

struct SearchResult {
  HeadSet heads;
  SearchBudget budget;
  /// Every evaluated candidate in evaluation order.
  std::vector<CandidateScore> candidates;
};

std::size_t greedy_budget(ModelShape shape);
std::size_t group_budget(ModelShape shape, int group_size);
std::size_t coarse_to_fine_budget(ModelShape shape, int top_layers);

/// Every single head is scored; the k best form the head set.
SearchResult greedy_search(ModelShape shape, int k, const CandidateEvaluator& evaluate,
                           int workers = 1);

/// Adjacent heads of one layer form a group; the union of the k_groups best is returned.
SearchResult group_search(ModelShape shape, int group_size, int k_groups,
                          const CandidateEvaluator& evaluate, int workers = 1);

struct TopPerLayer {
  int per_layer = 0;
};
struct TopFromPool {
  int count = 0;
};
using HeadSelection = std::variant<TopPerLayer, TopFromPool>;

/// Scores whole layers, keeps the `top_layers` best, scores each of their heads
/// alone, then selects heads per layer or from the pooled candidates.
SearchResult coarse_to_fine_search(ModelShape shape, int top_layers, HeadSelection selection,
                                   const CandidateEvaluator& evaluate, int workers = 1);

enum class Strategy { greedy, group, coarse_to_fine };

std::string to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct GridPoint {
  Strategy strategy = Strategy::coarse_to_fine;
  /// greedy: heads kept; group: groups kept.
  int top_k = 0;
  int group_size = 8;
  int top_layers = 0;
  HeadSelection selection = TopFromPool{0};

  std::string label() const;
  std::size_t predicted_budget(ModelShape shape) const;
};

struct GridPointResult {
  GridPoint point;
  SearchResult search;
  /// Score of the head set this grid point selected.
  CandidateScore final_score;
};

struct ProfilingReport {
  Strategy strategy = Strategy::coarse_to_fine;
  std::vector<GridPointResult> points;
  std::size_t chosen = 0;
  HeadSet chosen_heads;
  CandidateScore chosen_score;
  /// Whole sweep: each point's search plus one evaluation of its selected set.
  SearchBudget budget;
};

SearchResult run_grid_point(ModelShape shape, const GridPoint& point,
                            const CandidateEvaluator& evaluate, int workers = 1);

/// Runs every grid point and keeps the head set with the highest token-F1
/// (earliest point on ties). Throws ArgumentError on an empty grid.
ProfilingReport profile(ModelShape shape, std::span<const GridPoint> grid,
                        const CandidateEvaluator& evaluate, int workers = 1);

/// Cartesian grid of (top_layers, selection); combinations invalid for `shape` are dropped.
std::vector<GridPoint> coarse_to_fine_grid(ModelShape shape, std::span<const int> top_layers,
                                           std::span<const int> per_layer,
                                           std::span<const int> pool);

nlohmann::json to_json(const CandidateScore& score);
nlohmann::json to_json(const ProfilingReport& report, ModelShape shape);

/// Scores a head set by running the full pipeline on every profiling instance.
CandidateScore evaluate_headset(const Model& model, const HeadSet& head_set,
                                std::span<const QAInstance> instances, double delta,
                                const EmbeddingProvider& provider,
                                const PipelineOptions& options = {});

/// Pipeline-backed evaluator. Identification does not depend on the head set,
/// so it runs once per instance up front; scores are memoized per head set.
/// Copies share state and are safe to call concurrently.
class InstanceEvaluator {
 public:
  InstanceEvaluator(const Model& model, std::vector<QAInstance> instances,
                    const EmbeddingProvider& provider, double delta,
                    PipelineOptions options = {}, int workers = 1);

  CandidateScore operator()(const HeadSet& head_set) const;
  std::size_t num_instances() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

}  // namespace autopasta
