#include <autopasta/profiling.hpp>

#include <autopasta/error.hpp>
#include <autopasta/metrics.hpp>
#include <autopasta/parallel.hpp>

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <numeric>

namespace autopasta {

namespace {

void check_shape(ModelShape shape) {
  if (shape.num_layers <= 0 || shape.num_heads <= 0) {
    throw ArgumentError("model shape must have positive layer and head counts");
  }
}

std::string head_label(HeadLocation h) {
  return "head " + std::to_string(h.layer) + "." + std::to_string(h.head);
}

HeadSet whole_layer(ModelShape shape, int layer) {
  HeadSet out;
  for (int h = 0; h < shape.num_heads; ++h) out.insert({layer, h});
  return out;
}

// Evaluates candidates (possibly in parallel) and counts every evaluation.
std::vector<CandidateScore> score_all(const std::vector<std::pair<std::string, HeadSet>>& cands,
                                      const CandidateEvaluator& evaluate, int workers,
                                      SearchResult& result) {
  std::vector<CandidateScore> scores(cands.size());
  parallel_for(cands.size(), workers, [&](std::size_t i) {
    CandidateScore s = evaluate(cands[i].second);
    s.label = cands[i].first;
    s.candidate = cands[i].second;
    scores[i] = std::move(s);
  });
  result.budget.evaluations_used += cands.size();
  result.candidates.insert(result.candidates.end(), scores.begin(), scores.end());
  return scores;
}

// Positions of `scores` ordered by descending token-F1; candidates are
// enumerated in (layer, head) order, so a stable sort breaks ties that way.
std::vector<std::size_t> ranking(const std::vector<CandidateScore>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].token_f1 > scores[b].token_f1;
  });
  return order;
}

}  // namespace

std::size_t greedy_budget(ModelShape shape) {
  check_shape(shape);
  return static_cast<std::size_t>(shape.num_layers) * static_cast<std::size_t>(shape.num_heads);
}

std::size_t group_budget(ModelShape shape, int group_size) {
  check_shape(shape);
  if (group_size <= 0 || shape.num_heads % group_size != 0) {
    throw ArgumentError("head count " + std::to_string(shape.num_heads) +
                        " is not divisible by group size " + std::to_string(group_size));
  }
  return greedy_budget(shape) / static_cast<std::size_t>(group_size);
}

std::size_t coarse_to_fine_budget(ModelShape shape, int top_layers) {
  check_shape(shape);
  if (top_layers <= 0 || top_layers > shape.num_layers) {
    throw ArgumentError("top_layers must lie in [1, " + std::to_string(shape.num_layers) + "]");
  }
  return static_cast<std::size_t>(shape.num_layers) +
         static_cast<std::size_t>(top_layers) * static_cast<std::size_t>(shape.num_heads);
}

SearchResult greedy_search(ModelShape shape, int k, const CandidateEvaluator& evaluate,
                           int workers) {
  SearchResult result;
  result.budget.evaluations_predicted = greedy_budget(shape);
  if (k < 1 || static_cast<std::size_t>(k) > result.budget.evaluations_predicted) {
    throw ArgumentError("greedy k must lie in [1, L*H]");
  }
  std::vector<std::pair<std::string, HeadSet>> cands;
  for (int l = 0; l < shape.num_layers; ++l) {
    for (int h = 0; h < shape.num_heads; ++h) cands.push_back({head_label({l, h}), HeadSet{{l, h}}});
  }
  const auto scores = score_all(cands, evaluate, workers, result);
  const auto order = ranking(scores);
  for (int r = 0; r < k; ++r) result.heads = result.heads.united(scores[order[r]].candidate);
  return result;
}

SearchResult group_search(ModelShape shape, int group_size, int k_groups,
                          const CandidateEvaluator& evaluate, int workers) {
  SearchResult result;
  result.budget.evaluations_predicted = group_budget(shape, group_size);
  if (k_groups < 1 || static_cast<std::size_t>(k_groups) > result.budget.evaluations_predicted) {
    throw ArgumentError("k_groups must lie in [1, L*H/group_size]");
  }
  std::vector<std::pair<std::string, HeadSet>> cands;
  for (int l = 0; l < shape.num_layers; ++l) {
    for (int g = 0; g < shape.num_heads / group_size; ++g) {
      HeadSet group;
      for (int h = g * group_size; h < (g + 1) * group_size; ++h) group.insert({l, h});
      cands.push_back({"group " + std::to_string(l) + ":" + std::to_string(g), std::move(group)});
    }
  }
  const auto scores = score_all(cands, evaluate, workers, result);
  const auto order = ranking(scores);
  for (int r = 0; r < k_groups; ++r) result.heads = result.heads.united(scores[order[r]].candidate);
  return result;
}

SearchResult coarse_to_fine_search(ModelShape shape, int top_layers, HeadSelection selection,
                                   const CandidateEvaluator& evaluate, int workers) {
  SearchResult result;
  result.budget.evaluations_predicted = coarse_to_fine_budget(shape, top_layers);
  if (const auto* per = std::get_if<TopPerLayer>(&selection)) {
    if (per->per_layer < 1 || per->per_layer > shape.num_heads) {
      throw ArgumentError("top-i per layer must lie in [1, H]");
    }
  } else {
    const int j = std::get<TopFromPool>(selection).count;
    if (j < 1 || j > top_layers * shape.num_heads) {
      throw ArgumentError("top-j from pool must lie in [1, l*H]");
    }
  }

  std::vector<std::pair<std::string, HeadSet>> layers;
  for (int l = 0; l < shape.num_layers; ++l) {
    layers.push_back({"layer " + std::to_string(l), whole_layer(shape, l)});
  }
  const auto layer_scores = score_all(layers, evaluate, workers, result);
  const auto layer_order = ranking(layer_scores);
  std::vector<int> chosen_layers;
  for (int r = 0; r < top_layers; ++r) chosen_layers.push_back(static_cast<int>(layer_order[r]));
  std::sort(chosen_layers.begin(), chosen_layers.end());

  std::vector<std::pair<std::string, HeadSet>> heads;
  for (int l : chosen_layers) {
    for (int h = 0; h < shape.num_heads; ++h) heads.push_back({head_label({l, h}), HeadSet{{l, h}}});
  }
  const auto head_scores = score_all(heads, evaluate, workers, result);

  if (const auto* per = std::get_if<TopPerLayer>(&selection)) {
    const auto H = static_cast<std::size_t>(shape.num_heads);
    for (std::size_t li = 0; li < chosen_layers.size(); ++li) {
      const std::vector<CandidateScore> layer_heads(
          head_scores.begin() + static_cast<std::ptrdiff_t>(li * H),
          head_scores.begin() + static_cast<std::ptrdiff_t>((li + 1) * H));
      const auto order = ranking(layer_heads);
      for (int r = 0; r < per->per_layer; ++r) {
        result.heads = result.heads.united(layer_heads[order[r]].candidate);
      }
    }
  } else {
    const auto order = ranking(head_scores);
    for (int r = 0; r < std::get<TopFromPool>(selection).count; ++r) {
      result.heads = result.heads.united(head_scores[order[r]].candidate);
    }
  }
  return result;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::greedy:
      return "greedy";
    case Strategy::group:
      return "group";
    case Strategy::coarse_to_fine:
      return "coarse-to-fine";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "greedy") return Strategy::greedy;
  if (name == "group") return Strategy::group;
  if (name == "coarse-to-fine" || name == "coarse_to_fine") return Strategy::coarse_to_fine;
  throw ArgumentError("unknown search strategy \"" + std::string(name) +
                      "\" (expected greedy, group or coarse-to-fine)");
}

std::string GridPoint::label() const {
  switch (strategy) {
    case Strategy::greedy:
      return "greedy top-" + std::to_string(top_k);
    case Strategy::group:
      return "group size " + std::to_string(group_size) + " top-" + std::to_string(top_k);
    case Strategy::coarse_to_fine:
      if (const auto* per = std::get_if<TopPerLayer>(&selection)) {
        return "top " + std::to_string(per->per_layer) + " heads from each of top " +
               std::to_string(top_layers) + " layers";
      }
      return "top " + std::to_string(std::get<TopFromPool>(selection).count) +
             " heads from top " + std::to_string(top_layers) + " layers";
  }
  return {};
}

std::size_t GridPoint::predicted_budget(ModelShape shape) const {
  switch (strategy) {
    case Strategy::greedy:
      return greedy_budget(shape);
    case Strategy::group:
      return group_budget(shape, group_size);
    case Strategy::coarse_to_fine:
      return coarse_to_fine_budget(shape, top_layers);
  }
  return 0;
}

SearchResult run_grid_point(ModelShape shape, const GridPoint& point,
                            const CandidateEvaluator& evaluate, int workers) {
  switch (point.strategy) {
    case Strategy::greedy:
      return greedy_search(shape, point.top_k, evaluate, workers);
    case Strategy::group:
      return group_search(shape, point.group_size, point.top_k, evaluate, workers);
    case Strategy::coarse_to_fine:
      return coarse_to_fine_search(shape, point.top_layers, point.selection, evaluate, workers);
  }
  throw ArgumentError("unknown strategy");
}

ProfilingReport profile(ModelShape shape, std::span<const GridPoint> grid,
                        const CandidateEvaluator& evaluate, int workers) {
  if (grid.empty()) throw ArgumentError("profiling grid is empty");
  ProfilingReport report;
  report.strategy = grid.front().strategy;
  for (const auto& point : grid) {
    GridPointResult r;
    r.point = point;
    r.search = run_grid_point(shape, point, evaluate, workers);
    r.final_score = evaluate(r.search.heads);
    r.final_score.label = point.label();
    r.final_score.candidate = r.search.heads;
    report.budget.evaluations_used += r.search.budget.evaluations_used + 1;
    report.budget.evaluations_predicted += point.predicted_budget(shape) + 1;
    report.points.push_back(std::move(r));
  }
  for (std::size_t i = 1; i < report.points.size(); ++i) {
    if (report.points[i].final_score.token_f1 >
        report.points[report.chosen].final_score.token_f1) {
      report.chosen = i;
    }
  }
  report.chosen_heads = report.points[report.chosen].search.heads;
  report.chosen_score = report.points[report.chosen].final_score;
  return report;
}

std::vector<GridPoint> coarse_to_fine_grid(ModelShape shape, std::span<const int> top_layers,
                                           std::span<const int> per_layer,
                                           std::span<const int> pool) {
  std::vector<GridPoint> grid;
  for (int l : top_layers) {
    if (l < 1 || l > shape.num_layers) continue;
    for (int i : per_layer) {
      if (i < 1 || i > shape.num_heads) continue;
      grid.push_back({Strategy::coarse_to_fine, 0, 8, l, TopPerLayer{i}});
    }
    for (int j : pool) {
      if (j < 1 || j > l * shape.num_heads) continue;
      grid.push_back({Strategy::coarse_to_fine, 0, 8, l, TopFromPool{j}});
    }
  }
  return grid;
}

nlohmann::json to_json(const CandidateScore& score) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& m : score.candidate) heads.push_back({m.layer, m.head});
  return {{"label", score.label},
          {"heads", heads},
          {"token_f1", score.token_f1},
          {"em", score.em},
          {"num_instances", score.num_instances}};
}

nlohmann::json to_json(const ProfilingReport& report, ModelShape shape) {
  nlohmann::json doc;
  doc["strategy"] = to_string(report.strategy);
  doc["num_layers"] = shape.num_layers;
  doc["num_heads"] = shape.num_heads;
  doc["points"] = nlohmann::json::array();
  for (const auto& p : report.points) {
    nlohmann::json pj;
    pj["label"] = p.point.label();
    pj["evaluations_used"] = p.search.budget.evaluations_used;
    pj["evaluations_predicted"] = p.search.budget.evaluations_predicted;
    pj["final"] = to_json(p.final_score);
    pj["candidates"] = nlohmann::json::array();
    for (const auto& c : p.search.candidates) pj["candidates"].push_back(to_json(c));
    doc["points"].push_back(std::move(pj));
  }
  doc["chosen"] = to_json(report.chosen_score);
  doc["evaluations_used"] = report.budget.evaluations_used;
  doc["evaluations_predicted"] = report.budget.evaluations_predicted;
  return doc;
}

CandidateScore evaluate_headset(const Model& model, const HeadSet& head_set,
                                std::span<const QAInstance> instances, double delta,
                                const EmbeddingProvider& provider,
                                const PipelineOptions& options) {
  if (instances.empty()) throw ArgumentError("profiling set is empty");
  CandidateScore score;
  score.candidate = head_set;
  double em = 0.0, f1 = 0.0;
  for (const auto& inst : instances) {
    const PipelineResult r = autopasta_answer(model, inst, head_set, delta, provider, options);
    em += exact_match(r.answer, inst.answers);
    f1 += token_f1(r.answer, inst.answers);
  }
  const auto n = static_cast<double>(instances.size());
  score.em = 100.0 * em / n;
  score.token_f1 = 100.0 * f1 / n;
  score.num_instances = instances.size();
  return score;
}

struct InstanceEvaluator::State {
  const Model* model;
  std::vector<QAInstance> instances;
  std::vector<Identification> identifications;
  double delta;
  PipelineOptions options;
  std::mutex mutex;
  std::map<HeadSet, CandidateScore> memo;
};

InstanceEvaluator::InstanceEvaluator(const Model& model, std::vector<QAInstance> instances,
                                     const EmbeddingProvider& provider, double delta,
                                     PipelineOptions options, int workers)
    : state_(std::make_shared<State>()) {
  if (instances.empty()) throw ArgumentError("profiling set is empty");
  if (!(delta > 0.0)) throw ArgumentError("steering delta must be positive");
  state_->model = &model;
  state_->instances = std::move(instances);
  state_->delta = delta;
  state_->options = options;
  state_->identifications.resize(state_->instances.size());
  parallel_for(state_->instances.size(), workers, [&](std::size_t i) {
    state_->identifications[i] =
        identify_key_sentences(model, state_->instances[i], provider, state_->options);
  });
}

std::size_t InstanceEvaluator::num_instances() const { return state_->instances.size(); }

CandidateScore InstanceEvaluator::operator()(const HeadSet& head_set) const {
  {
    std::lock_guard lock(state_->mutex);
    const auto it = state_->memo.find(head_set);
    if (it != state_->memo.end()) return it->second;
  }
  CandidateScore score;
  score.candidate = head_set;
  double em = 0.0, f1 = 0.0;
  for (std::size_t i = 0; i < state_->instances.size(); ++i) {
    const QAInstance& inst = state_->instances[i];
    const PipelineResult r = steered_answer(*state_->model, inst, state_->identifications[i],
                                            head_set, state_->delta, state_->options);
    em += exact_match(r.answer, inst.answers);
    f1 += token_f1(r.answer, inst.answers);
  }
  const auto n = static_cast<double>(state_->instances.size());
  score.em = 100.0 * em / n;
  score.token_f1 = 100.0 * f1 / n;
  score.num_instances = state_->instances.size();
  std::lock_guard lock(state_->mutex);
  state_->memo.emplace(head_set, score);
  return score;
}

}  // namespace autopasta
