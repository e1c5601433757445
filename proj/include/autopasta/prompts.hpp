#pragma once

#include <autopasta/sentence_match.hpp>
#include <autopasta/steering.hpp>
#include <autopasta/tokenizer.hpp>

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace autopasta {

struct RenderedPrompt {
  std::string template_name;
  std::string text;
  /// Character range of each substituted field ("question", "context", "key_sentence").
  std::map<std::string, CharRange> field_spans;

  std::string_view field(const std::string& name) const;
  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

/// Literal text with `{name}` placeholders; any other brace is literal.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(std::string name, std::string source);

  static PromptTemplate from_file(std::string name, const std::filesystem::path& path);

  const std::string& name() const noexcept { return name_; }
  const std::string& source() const noexcept { return source_; }
  std::vector<std::string> fields() const;

  /// Throws ArgumentError if a placeholder has no value.
  RenderedPrompt render(const std::map<std::string, std::string>& values) const;

 private:
  struct Piece {
    bool is_field;
    std::string text;
  };

  std::string name_;
  std::string source_;
  std::vector<Piece> pieces_;
};

struct PromptTemplates {
  PromptTemplate identification;
  PromptTemplate direct;
  PromptTemplate iterative_second_round;

  /// Compiled-in copies of the golden templates.
  static const PromptTemplates& defaults();
  /// Loads identification.txt, direct.txt and iterative_second_round.txt.
  static PromptTemplates load_dir(const std::filesystem::path& dir);
};

RenderedPrompt render_identification(std::string_view question, std::string_view context,
                                     const PromptTemplates& templates = PromptTemplates::defaults());
RenderedPrompt render_direct(std::string_view question, std::string_view context,
                             const PromptTemplates& templates = PromptTemplates::defaults());
RenderedPrompt render_iterative_second_round(
    std::string_view question, std::string_view context, std::string_view key_sentence,
    const PromptTemplates& templates = PromptTemplates::defaults());

/// Indices of every token whose character range overlaps any of `spans`, with
/// span offsets taken relative to the prompt's context field. Throws
/// ConsistencyError if a span leaves the context field.
HighlightIndexSet locate_highlight(const RenderedPrompt& rendered,
                                   std::span<const SentenceSpan> spans,
                                   const TokenizedPrompt& prompt_tokens);

}  // namespace autopasta
