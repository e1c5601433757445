#include <autopasta/prompts.hpp>

#include <autopasta/error.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace autopasta {

namespace {

constexpr const char* kIdentificationTemplate =
    "A question, and a passage are shown below. Please select the key sentence in the passage "
    "that supports to answer the question correctly. Only output the exactly same sentence from "
    "the passage without other additional words.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Passage: {context}\n"
    "\n"
    "Sentence:";

constexpr const char* kDirectTemplate =
    "Answer the question below, paired with a context that provides background knowledge. Only "
    "output the answer without other context words.\n"
    "\n"
    "Context: {context}\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer:";

constexpr const char* kIterativeSecondRoundTemplate =
    "Answer the question below, paired with a context that provides background knowledge, and a "
    "key sentence. Only output the answer without other context words.\n"
    "\n"
    "Context: {context}\n"
    "\n"
    "Key Sentence:{key_sentence}\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer:";

bool is_field_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) || c == '_';
  });
}

}  // namespace

std::string_view RenderedPrompt::field(const std::string& name) const {
  const auto it = field_spans.find(name);
  if (it == field_spans.end()) throw LookupError("prompt has no field " + name);
  return std::string_view(text).substr(it->second.begin, it->second.size());
}

PromptTemplate::PromptTemplate(std::string name, std::string source)
    : name_(std::move(name)), source_(std::move(source)) {
  std::string literal;
  std::size_t i = 0;
  while (i < source_.size()) {
    if (source_[i] == '{') {
      const auto close = source_.find('}', i + 1);
      if (close != std::string::npos) {
        const std::string_view inner = std::string_view(source_).substr(i + 1, close - i - 1);
        if (is_field_name(inner)) {
          if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
          literal.clear();
          pieces_.push_back({true, std::string(inner)});
          i = close + 1;
          continue;
        }
      }
    }
    literal.push_back(source_[i]);
    ++i;
  }
  if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
}

PromptTemplate PromptTemplate::from_file(std::string name, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open prompt template " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return PromptTemplate(std::move(name), buffer.str());
}

std::vector<std::string> PromptTemplate::fields() const {
  std::vector<std::string> out;
  for (const auto& p : pieces_) {
    if (p.is_field && std::find(out.begin(), out.end(), p.text) == out.end()) out.push_back(p.text);
  }
  return out;
}

RenderedPrompt PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  RenderedPrompt out;
  out.template_name = name_;
  for (const auto& p : pieces_) {
    if (!p.is_field) {
      out.text += p.text;
      continue;
    }
    const auto it = values.find(p.text);
    if (it == values.end()) {
      throw ArgumentError("template " + name_ + " needs a value for {" + p.text + "}");
    }
    const std::size_t begin = out.text.size();
    out.text += it->second;
    out.field_spans[p.text] = {begin, out.text.size()};
  }
  return out;
}

const PromptTemplates& PromptTemplates::defaults() {
  static const PromptTemplates kDefaults{
      PromptTemplate("identification", kIdentificationTemplate),
      PromptTemplate("direct", kDirectTemplate),
      PromptTemplate("iterative_second_round", kIterativeSecondRoundTemplate),
  };
  return kDefaults;
}

PromptTemplates PromptTemplates::load_dir(const std::filesystem::path& dir) {
  return {
      PromptTemplate::from_file("identification", dir / "identification.txt"),
      PromptTemplate::from_file("direct", dir / "direct.txt"),
      PromptTemplate::from_file("iterative_second_round", dir / "iterative_second_round.txt"),
  };
}

RenderedPrompt render_identification(std::string_view question, std::string_view context,
                                     const PromptTemplates& templates) {
  return templates.identification.render(
      {{"question", std::string(question)}, {"context", std::string(context)}});
}

RenderedPrompt render_direct(std::string_view question, std::string_view context,
                             const PromptTemplates& templates) {
  return templates.direct.render(
      {{"question", std::string(question)}, {"context", std::string(context)}});
}

RenderedPrompt render_iterative_second_round(std::string_view question, std::string_view context,
                                             std::string_view key_sentence,
                                             const PromptTemplates& templates) {
  return templates.iterative_second_round.render({{"question", std::string(question)},
                                                  {"context", std::string(context)},
                                                  {"key_sentence", std::string(key_sentence)}});
}

HighlightIndexSet locate_highlight(const RenderedPrompt& rendered,
                                   std::span<const SentenceSpan> spans,
                                   const TokenizedPrompt& prompt_tokens) {
  if (spans.empty()) return {};
  const auto it = rendered.field_spans.find("context");
  if (it == rendered.field_spans.end()) {
    throw ConsistencyError("prompt " + rendered.template_name + " has no context field");
  }
  const CharRange context = it->second;
  std::vector<CharRange> absolute;
  for (const auto& s : spans) {
    if (s.char_start > s.char_end || s.char_end > context.size()) {
      throw ConsistencyError("sentence " + std::to_string(s.index) +
                             " lies outside the prompt's context field");
    }
    const CharRange abs{context.begin + s.char_start, context.begin + s.char_end};
    if (std::string_view(rendered.text).substr(abs.begin, abs.size()) != s.text) {
      throw ConsistencyError("sentence " + std::to_string(s.index) +
                             " text does not match the prompt's context at its offsets");
    }
    absolute.push_back(abs);
  }
  std::vector<std::size_t> indices;
  for (std::size_t t = 0; t < prompt_tokens.offsets.size(); ++t) {
    const CharRange& tok = prompt_tokens.offsets[t];
    for (const auto& span : absolute) {
      if (tok.overlaps(span)) {
        indices.push_back(t);
        break;
      }
    }
  }
  return HighlightIndexSet(std::move(indices));
}

}  // namespace autopasta
