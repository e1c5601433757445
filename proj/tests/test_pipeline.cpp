#include <autopasta/error.hpp>
#include <autopasta/pipeline.hpp>

#include <doctest.h>

#include <filesystem>

using namespace autopasta;

namespace {

const Model& model() {
  static const Model m = [] {
    ModelConfig c;
    return Model::init_random(c, 7);
  }();
  return m;
}

const QAInstance& instance(const std::string& id) {
  static const auto data = load_dataset(std::filesystem::path(AUTOPASTA_TEST_DATA_DIR) / "fixture16.jsonl");
  for (const auto& q : data) {
    if (q.id == id) return q;
  }
  throw std::runtime_error("missing " + id);
}

PipelineOptions options() {
  PipelineOptions o;
  o.answer_params.max_new_tokens = 8;
  return o;
}

const HashedBagOfTokens kProvider;
const HeadSet kHeads{{0, 1}, {1, 2}, {2, 0}, {3, 3}};

}  // namespace

TEST_CASE("clean_generation keeps the first trimmed line") {
  CHECK(clean_generation("  July 2, 1776.\nmore") == "July 2, 1776.");
  CHECK(clean_generation("\n\n x\ny") == "x");
  CHECK(clean_generation("  ") == "");
  CHECK(clean_generation("abc\r\n") == "abc");
}

TEST_CASE("direct answering uses one prompt") {
  const auto& q = instance("nq-0");
  const auto r = direct_answer(model(), q, options());
  REQUIRE(r.prompts_used.size() == 1);
  CHECK(r.prompts_used[0].text == render_direct(q.question, build_context(q).text).text);
  CHECK_FALSE(r.steering_applied);
  CHECK(r.answer == clean_generation(r.raw_answer));
  CHECK(direct_answer(model(), q, options()).raw_answer == r.raw_answer);
}

TEST_CASE("iterative prompting prompt counts") {
  const auto single = iterative_answer(model(), instance("nq-0"), kProvider, options());
  CHECK(single.prompts_used.size() == 2);
  CHECK(single.prompts_used[1].template_name == "iterative_second_round");
  CHECK_FALSE(single.steering_applied);
  const auto two = iterative_answer(model(), instance("hotpot-0"), kProvider, options());
  CHECK(two.prompts_used.size() == 3);
  CHECK(two.g1_raw.size() == 2);
}

TEST_CASE("identification step is an unsteered generation of the identification prompt") {
  const auto& q = instance("nq-0");
  const auto ident = identify_key_sentences(model(), q, kProvider, options());
  REQUIRE(ident.prompts.size() == 1);
  const Context ctx = build_context(q);
  std::size_t longest = 0;
  for (const auto& s : ctx.sentences) longest = std::max(longest, s.text.size());
  GenerationParams p;
  p.max_new_tokens = static_cast<int>(longest) + 16;
  const auto expected = model().generate(tokenize(render_identification(q.question, ctx.text).text), p);
  CHECK(ident.g1_raw[0] == expected.text);

  const auto steered = autopasta_answer(model(), q, kHeads, kDefaultDelta, kProvider, options());
  CHECK(steered.g1_raw == ident.g1_raw);
  const auto other = autopasta_answer(model(), q, HeadSet{{3, 0}}, 5.0, kProvider, options());
  CHECK(other.g1_raw == ident.g1_raw);
}

TEST_CASE("autopasta answers with the unchanged direct prompt") {
  for (const auto* id : {"nq-0", "hotpot-0", "nq-3"}) {
    const auto& q = instance(id);
    const auto direct = direct_answer(model(), q, options());
    const auto ap = autopasta_answer(model(), q, kHeads, kDefaultDelta, kProvider, options());
    CHECK(ap.prompts_used.back().text == direct.prompts_used[0].text);
    CHECK(ap.steering_applied == !ap.identification_failed);

    const auto empty = autopasta_answer(model(), q, HeadSet{}, kDefaultDelta, kProvider, options());
    CHECK_FALSE(empty.steering_applied);
    CHECK(empty.answer == direct.answer);
    CHECK(empty.raw_answer == direct.raw_answer);

    const Context ctx = build_context(q);
    for (const auto& s : ap.matched_sentences) {
      CHECK(std::find(ctx.sentences.begin(), ctx.sentences.end(), s) != ctx.sentences.end());
      CHECK(ctx.text.substr(s.char_start, s.char_end - s.char_start) == s.text);
    }
  }
}

TEST_CASE("multi-hop highlight is the union of matched sentences") {
  const auto& q = instance("hotpot-0");
  const Context ctx = build_context(q);
  Identification ident;
  ident.matched = {ctx.sentences[0], ctx.sentences[2]};
  const auto r = steered_answer(model(), q, ident, kHeads, kDefaultDelta, options());
  CHECK(r.steering_applied);
  CHECK(r.highlight.size() == ctx.sentences[0].text.size() + ctx.sentences[2].text.size());
  const auto& prompt = r.prompts_used.back();
  const auto base = prompt.field_spans.at("context").begin;
  std::string joined;
  for (std::size_t i : r.highlight) joined.push_back(prompt.text[i]);
  CHECK(joined == ctx.sentences[0].text + ctx.sentences[2].text);
  CHECK(*r.highlight.begin() == base + ctx.sentences[0].char_start);
}

TEST_CASE("failed identification falls back to an unsteered direct answer") {
  const auto& q = instance("nq-0");
  Identification ident;
  ident.g1_raw = {""};
  ident.failed = true;
  const auto r = steered_answer(model(), q, ident, kHeads, kDefaultDelta, options());
  CHECK_FALSE(r.steering_applied);
  CHECK(r.identification_failed);
  CHECK(r.highlight.empty());
  CHECK(r.raw_answer == direct_answer(model(), q, options()).raw_answer);
}

TEST_CASE("steering changes attention at steered heads") {
  const auto& q = instance("nq-0");
  const Context ctx = build_context(q);
  Identification ident;
  ident.matched = {ctx.sentences[0]};
  PipelineOptions o = options();
  o.answer_params.capture_attention = true;
  o.answer_params.capture_heads = kHeads;
  const auto plain = steered_answer(model(), q, ident, HeadSet{}, kDefaultDelta, o);
  const auto steered = steered_answer(model(), q, ident, kHeads, kDefaultDelta, o);
  REQUIRE(plain.snapshots.size() >= kHeads.size());
  for (std::size_t k = 0; k < kHeads.size(); ++k) {
    REQUIRE(plain.snapshots[k].step == 0);
    CHECK(plain.snapshots[k].head == steered.snapshots[k].head);
    CHECK_FALSE(plain.snapshots[k].weights == steered.snapshots[k].weights);
  }
}

TEST_CASE("pipeline argument errors") {
  const auto& q = instance("nq-0");
  CHECK_THROWS_AS(autopasta_answer(model(), q, HeadSet{{9, 0}}, kDefaultDelta, kProvider, options()),
                  BoundsError);
  CHECK_THROWS_AS(autopasta_answer(model(), q, kHeads, 0.0, kProvider, options()), ArgumentError);
}
