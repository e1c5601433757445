#include <autopasta/pipeline.hpp>

#include <autopasta/error.hpp>

#include <algorithm>
#include <map>

namespace autopasta {

namespace {

GenerationResult run_prompt(const Model& model, const RenderedPrompt& prompt,
                            const GenerationParams& params, const SteeringSpec* spec = nullptr) {
  return model.generate(tokenize(prompt.text), params, spec);
}

std::string join_sentences(const std::vector<SentenceSpan>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s.text;
  }
  return out;
}

}  // namespace

std::string clean_generation(std::string_view text) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
  };
  std::size_t begin = 0;
  while (begin < text.size() && is_space(text[begin])) ++begin;
  std::size_t end = text.find('\n', begin);
  if (end == std::string_view::npos) end = text.size();
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

PipelineResult direct_answer(const Model& model, const QAInstance& instance,
                             const PipelineOptions& options) {
  const Context ctx = build_context(instance);
  PipelineResult result;
  result.prompts_used.push_back(render_direct(instance.question, ctx.text, *options.templates));
  GenerationResult gen = run_prompt(model, result.prompts_used.back(), options.answer_params);
  result.raw_answer = gen.text;
  result.answer = clean_generation(gen.text);
  result.snapshots = std::move(gen.snapshots);
  return result;
}

Identification identify_key_sentences(const Model& model, const QAInstance& instance,
                                      const EmbeddingProvider& provider,
                                      const PipelineOptions& options) {
  const Context ctx = build_context(instance);
  std::size_t longest = 0;
  for (const auto& s : ctx.sentences) longest = std::max(longest, tokenize(s.text).size());
  const std::size_t budget = longest + static_cast<std::size_t>(options.identification_margin);

  Identification out;
  std::vector<HopGeneration> generations;
  std::map<std::string, std::string> cache;  // prompt text -> raw generation
  for (const auto& hop : instance.hops()) {
    const std::string hop_context = options.hop_restricted_identification && hop
                                        ? build_context(instance, hop).text
                                        : ctx.text;
    RenderedPrompt prompt = render_identification(instance.question, hop_context,
                                                  *options.templates);
    auto it = cache.find(prompt.text);
    if (it == cache.end()) {
      const std::size_t prompt_len = tokenize(prompt.text).size();
      const auto window = static_cast<std::size_t>(model.config().max_sequence_length);
      if (prompt_len >= window) {
        throw CapacityError("identification prompt for " + instance.id +
                            " does not fit the context window");
      }
      GenerationParams params;
      params.max_new_tokens = static_cast<int>(std::min(budget, window - prompt_len));
      it = cache.emplace(prompt.text, run_prompt(model, prompt, params).text).first;
    }
    out.g1_raw.push_back(it->second);
    out.prompts.push_back(std::move(prompt));
    std::string cleaned = clean_generation(it->second);
    if (!cleaned.empty()) generations.push_back({hop, std::move(cleaned)});
  }
  out.failed = generations.empty();
  if (!out.failed) out.matched = match_per_hop(generations, ctx.sentences, provider);
  return out;
}

PipelineResult iterative_answer(const Model& model, const QAInstance& instance,
                                const EmbeddingProvider& provider,
                                const PipelineOptions& options) {
  Identification ident = identify_key_sentences(model, instance, provider, options);
  const Context ctx = build_context(instance);
  PipelineResult result;
  result.g1_raw = std::move(ident.g1_raw);
  result.prompts_used = std::move(ident.prompts);
  result.matched_sentences = std::move(ident.matched);
  result.identification_failed = ident.failed;
  result.prompts_used.push_back(render_iterative_second_round(
      instance.question, ctx.text, join_sentences(result.matched_sentences), *options.templates));
  GenerationResult gen = run_prompt(model, result.prompts_used.back(), options.answer_params);
  result.raw_answer = gen.text;
  result.answer = clean_generation(gen.text);
  result.snapshots = std::move(gen.snapshots);
  return result;
}

PipelineResult steered_answer(const Model& model, const QAInstance& instance,
                              const Identification& identification, const HeadSet& head_set,
                              double delta, const PipelineOptions& options) {
  head_set.check_bounds(model.config().num_layers, model.config().num_heads);
  SteeringSpec spec{delta, head_set, {}};
  spec.validate();
  const Context ctx = build_context(instance);
  PipelineResult result;
  result.g1_raw = identification.g1_raw;
  result.prompts_used = identification.prompts;
  result.matched_sentences = identification.matched;
  result.identification_failed = identification.failed;

  RenderedPrompt prompt = render_direct(instance.question, ctx.text, *options.templates);
  const TokenizedPrompt tokens = tokenize(prompt.text);
  result.highlight = locate_highlight(prompt, result.matched_sentences, tokens);
  result.prompts_used.push_back(std::move(prompt));

  spec.highlight = result.highlight;
  result.steering_applied = !head_set.empty() && !identification.failed;
  GenerationResult gen = model.generate(tokens, options.answer_params,
                                        result.steering_applied ? &spec : nullptr);
  result.raw_answer = gen.text;
  result.answer = clean_generation(gen.text);
  result.snapshots = std::move(gen.snapshots);
  return result;
}

PipelineResult autopasta_answer(const Model& model, const QAInstance& instance,
                                const HeadSet& head_set, double delta,
                                const EmbeddingProvider& provider,
                                const PipelineOptions& options) {
  head_set.check_bounds(model.config().num_layers, model.config().num_heads);
  const Identification ident = identify_key_sentences(model, instance, provider, options);
  return steered_answer(model, instance, ident, head_set, delta, options);
}

}  // namespace autopasta
