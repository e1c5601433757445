#pragma once

// Batch commands behind the CLI: run one method, profile head sets, compare
// all three methods. Kept out of main.cpp so tests can drive them directly.

#include <autopasta/model.hpp>
#include <autopasta/profiling.hpp>
#include <autopasta/run_record.hpp>
#include <autopasta/sentence_match.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace autopasta::app {

struct RunConfig {
  // Model: a checkpoint manifest, or seeded random weights with `model`.
  std::string checkpoint;
  std::uint64_t model_seed = 7;
  ModelConfig model;

  std::string dataset;
  Method method = Method::direct;
  std::string head_set;
  std::string head_set_domain = "in-domain";
  double delta = kDefaultDelta;

  int max_new_tokens = 16;
  int identification_margin = 16;
  bool hop_restricted_identification = false;

  std::string embedding = "hashed";  // "hashed" or "file"
  std::string embedding_file;
  int embedding_dim = static_cast<int>(HashedBagOfTokens::kDefaultDimension);

  std::string template_dir;  // empty: compiled-in templates
  std::string output_dir = "runs";
  int workers = 1;

  std::size_t profiling_count = 1000;
  std::uint64_t split_seed = 0;

  Strategy strategy = Strategy::coarse_to_fine;
  std::vector<int> grid_l{3, 4, 5, 6};
  std::vector<int> grid_top_i{4, 6, 8};
  std::vector<int> grid_top_j{16, 24, 32, 64};
  int top_k = 16;
  int group_size = 8;
  int k_groups = 2;
  /// Per-candidate instance cap during profiling (0: all).
  std::size_t max_profile_instances = 0;

  bool snapshots = false;

  nlohmann::json to_json() const;
  /// Starts from `base` and overrides every key present in `doc`.
  static RunConfig from_json(const nlohmann::json& doc, RunConfig base);
  static RunConfig from_json(const nlohmann::json& doc);
  /// Throws ArgumentError on inconsistent settings.
  void validate() const;
  /// Hash of every setting that can change scores (not workers or output paths).
  std::string hash() const;
};

/// Defaults, then the config file (if any), then `overrides`.
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file,
                         const nlohmann::json& overrides);

struct Environment {
  std::unique_ptr<Model> model;
  std::unique_ptr<EmbeddingProvider> provider;
  PromptTemplates templates;
  DatasetSplit split;
};

Environment prepare(const RunConfig& config);

struct RunOutcome {
  RunRecord record;
  std::filesystem::path path;
};

/// Runs `method` over `instances`; per-instance results keep dataset order.
RunRecord run_method(const RunConfig& config, const Environment& env, Method method,
                     std::span<const QAInstance> instances, const HeadSet& head_set,
                     nlohmann::json* snapshots = nullptr);

RunOutcome cmd_run(const RunConfig& config, std::ostream& log);

struct ProfileOutcome {
  ProfilingReport report;
  std::filesystem::path report_path;
  std::filesystem::path head_set_path;
};

ProfileOutcome cmd_profile(const RunConfig& config, std::ostream& log);

struct ComparisonRow {
  Method method;
  double em = 0.0;
  double f1 = 0.0;
  double average = 0.0;
};

struct ComparisonTable {
  std::string caption;
  std::vector<ComparisonRow> rows;
  std::vector<RunRecord> runs;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

ComparisonTable cmd_compare(const RunConfig& config, std::ostream& log);

/// Head set for the autopasta method: the configured file, or the one a prior
/// profile run left in the output directory.
HeadSet resolve_head_set(const RunConfig& config);

}  // namespace autopasta::app
