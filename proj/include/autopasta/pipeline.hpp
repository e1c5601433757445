#pragma once

// Direct prompting, two-round iterative prompting, and the automatic
// identify / match-back / steer pipeline.

#include <autopasta/dataset.hpp>
#include <autopasta/model.hpp>
#include <autopasta/prompts.hpp>
#include <autopasta/sentence_match.hpp>
#include <autopasta/steering.hpp>

#include <string>
#include <vector>

namespace autopasta {

struct PipelineOptions {
  /// Decoding for the answering step.
  GenerationParams answer_params;
  /// Identification budget = longest context sentence in tokens + this margin.
  int identification_margin = 16;
  /// Show each hop's identification prompt only that hop's passages.
  bool hop_restricted_identification = false;
  const PromptTemplates* templates = &PromptTemplates::defaults();
};

/// Output of the unsteered identification step plus match-back.
struct Identification {
  std::vector<std::string> g1_raw;
  std::vector<RenderedPrompt> prompts;
  std::vector<SentenceSpan> matched;
  /// Every hop produced an empty generation; nothing is highlighted.
  bool failed = false;
};

struct PipelineResult {
  std::string answer;
  std::string raw_answer;
  std::vector<SentenceSpan> matched_sentences;
  std::vector<std::string> g1_raw;
  std::vector<RenderedPrompt> prompts_used;
  bool steering_applied = false;
  bool identification_failed = false;
  HighlightIndexSet highlight;
  std::vector<AttentionSnapshot> snapshots;
};

/// First line after leading whitespace is skipped, with trailing whitespace removed.
std::string clean_generation(std::string_view text);

PipelineResult direct_answer(const Model& model, const QAInstance& instance,
                             const PipelineOptions& options = {});

Identification identify_key_sentences(const Model& model, const QAInstance& instance,
                                      const EmbeddingProvider& provider,
                                      const PipelineOptions& options = {});

PipelineResult iterative_answer(const Model& model, const QAInstance& instance,
                                const EmbeddingProvider& provider,
                                const PipelineOptions& options = {});

/// Final step: direct prompt with the matched sentences highlighted at `head_set`.
PipelineResult steered_answer(const Model& model, const QAInstance& instance,
                              const Identification& identification, const HeadSet& head_set,
                              double delta, const PipelineOptions& options = {});

PipelineResult autopasta_answer(const Model& model, const QAInstance& instance,
                                const HeadSet& head_set, double delta,
                                const EmbeddingProvider& provider,
                                const PipelineOptions& options = {});

}  // namespace autopasta
