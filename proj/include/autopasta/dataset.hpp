#pragma once

// Open-book QA instances, their on-disk format and profiling/test splitting.

#include <autopasta/sentence_match.hpp>
#include <autopasta/tokenizer.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace autopasta {

struct Passage {
  std::optional<std::string> title;
  std::optional<std::string> hop_id;
  std::string text;
  /// Sentence ranges within `text`, ordered and non-overlapping.
  std::vector<CharRange> sentences;

  friend bool operator==(const Passage&, const Passage&) = default;
};

struct QAInstance {
  std::string id;
  std::string question;
  std::vector<Passage> passages;
  std::vector<std::string> answers;

  /// Throws ArgumentError when an invariant is broken.
  void validate() const;

  /// Distinct hop labels in passage order; a single nullopt when unlabelled.
  std::vector<std::optional<std::string>> hops() const;

  friend bool operator==(const QAInstance&, const QAInstance&) = default;
};

/// Flattened context string with sentence spans in its coordinates.
struct Context {
  std::string text;
  std::vector<SentenceSpan> sentences;
};

/// One passage renders as its text. Several passages render as "[k]: " lines,
/// with "title - " before the text when a title is present. When `hop` is
/// given, only that hop's passages are included (numbering stays global).
/// Sentence indices always refer to the full context.
Context build_context(const QAInstance& instance,
                      const std::optional<std::string>& hop = std::nullopt);

/// Line-delimited JSON. Throws ParseError with the 1-based line number.
std::vector<QAInstance> load_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, std::span<const QAInstance> instances);
QAInstance parse_instance(const std::string& json_line, std::size_t line_no = 0);
std::string format_instance(const QAInstance& instance);

struct DatasetSplit {
  std::vector<QAInstance> profiling;
  std::vector<QAInstance> test;
  std::uint64_t seed = 0;
};

/// Seeded Fisher-Yates shuffle, then the first `profiling_count` instances form
/// the profiling split. Throws ArgumentError if the dataset is too small.
DatasetSplit split_dataset(std::span<const QAInstance> instances, std::size_t profiling_count,
                           std::uint64_t seed);

/// Shuffled order used by split_dataset.
std::vector<std::size_t> split_permutation(std::size_t n, std::uint64_t seed);

}  // namespace autopasta
