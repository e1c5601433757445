#include <autopasta/error.hpp>
#include <autopasta/model.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>
#include <numeric>
#include <algorithm>

using namespace autopasta;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.num_layers = 4;
  c.num_heads = 4;
  c.model_dim = 64;
  c.vocab_size = 256;
  c.max_sequence_length = 256;
  return c;
}

const Model& toy_model() {
  static const Model m = Model::init_random(toy_config(), 7);
  return m;
}

double mass_on(std::span<const double> row, const HighlightIndexSet& g, std::size_t reach) {
  double s = 0.0;
  for (std::size_t j : g) {
    if (j < reach) s += row[j];
  }
  return s;
}

const AttentionSnapshot& find_snapshot(const GenerationResult& r, int step, HeadLocation h) {
  for (const auto& s : r.snapshots) {
    if (s.step == step && s.head == h) return s;
  }
  throw std::runtime_error("snapshot missing");
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig c = toy_config();
  c.model_dim = 65;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK_THROWS_AS(Model::init_random(c, 7), ArgumentError);
  c = toy_config();
  c.vocab_size = 100;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = toy_config();
  c.num_layers = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK(toy_config().head_dim() == 16);
}

TEST_CASE("seeded initialization is deterministic") {
  const Model a = Model::init_random(toy_config(), 7);
  const Model b = Model::init_random(toy_config(), 7);
  const Model c = Model::init_random(toy_config(), 8);
  CHECK(a.weights().token_embedding == b.weights().token_embedding);
  CHECK(a.weights().layers[3].wq == b.weights().layers[3].wq);
  CHECK_FALSE(a.weights().layers[0].wq == c.weights().layers[0].wq);

  GenerationParams p;
  p.max_new_tokens = 12;
  p.capture_logits = true;
  const auto prompt = tokenize("Question: what is steering?\nAnswer:");
  const auto ra = a.generate(prompt, p);
  const auto rb = b.generate(prompt, p);
  CHECK(ra.token_ids == rb.token_ids);
  CHECK(ra.step_logits == rb.step_logits);
}

TEST_CASE("byte tokenizer") {
  const auto t = tokenize("abc");
  CHECK(t.token_ids == std::vector<int>{'a', 'b', 'c'});
  REQUIRE(t.offsets.size() == 3);
  CHECK(t.offsets[0] == CharRange{0, 1});
  CHECK(t.offsets[1] == CharRange{1, 2});
  CHECK(t.offsets[2] == CharRange{2, 3});
  CHECK(tokenize("").size() == 0);
  CHECK_THROWS_AS(detokenize(std::vector<int>{300}), BoundsError);

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(0, 64), byte(0, 255);
  for (int i = 0; i < 1000; ++i) {
    std::string s(static_cast<std::size_t>(len(rng)), '\0');
    for (char& ch : s) ch = static_cast<char>(byte(rng));
    const auto tok = tokenize(s);
    CHECK(detokenize(tok.token_ids) == s);
    for (std::size_t k = 0; k < tok.offsets.size(); ++k) {
      CHECK(tok.offsets[k] == CharRange{k, k + 1});
    }
  }
}

TEST_CASE("checkpoint round trip and shape errors") {
  const auto dir = std::filesystem::temp_directory_path() / "autopasta_ckpt_test";
  std::filesystem::create_directories(dir);
  ModelConfig cfg = toy_config();
  cfg.num_layers = 2;
  const Model m = Model::init_random(cfg, 3);
  m.save_checkpoint(dir / "toy.manifest");
  const Model loaded = Model::load_checkpoint(dir / "toy.manifest");
  CHECK(loaded.config().num_layers == 2);
  CHECK(loaded.config().ffn_width() == cfg.ffn_width());
  CHECK(loaded.weights().layers[1].ffn_out == m.weights().layers[1].ffn_out);

  GenerationParams p;
  p.max_new_tokens = 8;
  const auto prompt = tokenize("checkpoint");
  CHECK(loaded.generate(prompt, p).token_ids == m.generate(prompt, p).token_ids);

  // Corrupt one projection's declared shape.
  std::ifstream in(dir / "toy.manifest");
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  const auto pos = text.find("layers.0.attn.wq 64,64");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, std::string("layers.0.attn.wq 64,64").size(), "layers.0.attn.wq 64,32");
  std::ofstream(dir / "bad.manifest") << text;
  std::filesystem::copy_file(dir / "toy.bin", dir / "bad.bin",
                             std::filesystem::copy_options::overwrite_existing);
  CHECK_THROWS_AS(Model::load_checkpoint(dir / "bad.manifest"), LoadError);
  CHECK_THROWS_AS(Model::load_checkpoint(dir / "missing.manifest"), LoadError);

  ModelWeights w = m.weights();
  w.layers[0].wv = Matrix(64, 63);
  CHECK_THROWS_AS(Model::from_weights(cfg, w), LoadError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generation preconditions") {
  const Model& m = toy_model();
  GenerationParams p;
  p.max_new_tokens = 300;
  CHECK_THROWS_AS(m.generate(tokenize("hello"), p), CapacityError);
  p.max_new_tokens = 4;
  CHECK_THROWS_AS(m.generate(tokenize(""), p), ArgumentError);
  SteeringSpec spec{kDefaultDelta, HeadSet{{0, 0}}, HighlightIndexSet{5}};
  CHECK_THROWS_AS(m.generate(tokenize("hello"), p, &spec), BoundsError);
  spec.highlight = HighlightIndexSet{1};
  spec.head_set = HeadSet{{4, 0}};
  CHECK_THROWS_AS(m.generate(tokenize("hello"), p, &spec), BoundsError);
  p.max_new_tokens = 0;
  CHECK_THROWS_AS(m.generate(tokenize("hello"), p), ArgumentError);
}

TEST_CASE("steering neutrality in generation") {
  const Model& m = toy_model();
  const auto prompt = tokenize("Context: the river is long. Question: how long? Answer:");
  GenerationParams p;
  p.max_new_tokens = 10;
  p.capture_logits = true;
  const auto plain = m.generate(prompt, p);

  SteeringSpec nobody{kDefaultDelta, HeadSet{}, HighlightIndexSet{3, 4, 5}};
  const auto with_empty = m.generate(prompt, p, &nobody);
  CHECK(with_empty.text == plain.text);
  CHECK(with_empty.step_logits == plain.step_logits);

  std::vector<std::size_t> all(prompt.size());
  std::iota(all.begin(), all.end(), 0);
  SteeringSpec everything{kDefaultDelta, HeadSet{{0, 0}, {1, 1}, {2, 2}, {3, 3}},
                          HighlightIndexSet(all)};
  const auto with_all = m.generate(prompt, p, &everything);
  REQUIRE(!with_all.token_ids.empty());
  CHECK(with_all.token_ids.front() == plain.token_ids.front());
  CHECK(with_all.step_logits.front() == plain.step_logits.front());
}

TEST_CASE("steering moves attention mass onto the highlight at every prefill row") {
  const Model& m = toy_model();
  const std::string text =
      "Context: The sound stretches 110 miles from the river. It is wide. Question: how long?";
  const auto prompt = tokenize(text);
  const auto begin = text.find("The sound");
  const auto end = text.find("river.") + 6;
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  const HighlightIndexSet g(idx);

  for (const HeadSet& heads : {HeadSet{{0, 0}, {0, 1}, {0, 2}, {0, 3}},
                               HeadSet{{0, 1}, {1, 2}, {2, 0}, {3, 3}}}) {
    const SteeringSpec spec{kDefaultDelta, heads, g};
    GenerationParams p;
    p.max_new_tokens = 3;
    p.capture_attention = true;
    const auto plain = m.generate(prompt, p);
    const auto steered = m.generate(prompt, p, &spec);

    // Inputs to the lowest steered layer are unchanged, so the increase holds there exactly.
    const int lowest_layer = heads.members().front().layer;
    for (const auto& h : heads) {
      if (h.layer != lowest_layer) continue;
      const auto& a = find_snapshot(plain, 0, h).weights;
      const auto& b = find_snapshot(steered, 0, h).weights;
      for (std::size_t i = 0; i < prompt.size(); ++i) {
        const std::size_t reach = i + 1;
        const std::size_t highlighted =
            static_cast<std::size_t>(std::count_if(g.begin(), g.end(), [&](std::size_t j) { return j < reach; }));
        if (highlighted == 0 || highlighted == reach) continue;
        CHECK(mass_on(b.row(i), g, reach) > mass_on(a.row(i), g, reach));
      }
    }

    // Heads at or below the lowest steered layer see identical inputs, so the
    // unsteered ones among them match bit for bit.
    const int lowest = heads.members().front().layer;
    for (int l = 0; l <= lowest; ++l) {
      for (int h = 0; h < 4; ++h) {
        if (heads.contains({l, h})) continue;
        CHECK(find_snapshot(plain, 0, {l, h}).weights == find_snapshot(steered, 0, {l, h}).weights);
      }
    }
  }
}

TEST_CASE("attention rows are normalized at every layer, head and step") {
  const Model& m = toy_model();
  const auto prompt = tokenize("normalization check prompt");
  SteeringSpec spec{kDefaultDelta, HeadSet{{1, 0}, {2, 3}}, HighlightIndexSet{2, 3, 4, 9}};
  GenerationParams p;
  p.max_new_tokens = 6;
  p.capture_attention = true;
  const auto r = m.generate(prompt, p, &spec);
  CHECK(r.snapshots.size() >= 16);
  for (const auto& snap : r.snapshots) {
    for (std::size_t i = 0; i < snap.weights.rows(); ++i) {
      double s = 0.0;
      for (double v : snap.weights.row(i)) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("incremental decoding matches whole-sequence recomputation") {
  const Model& m = toy_model();
  const auto prompt = tokenize("The wall fell in 1989. Question: when? Answer:");
  const SteeringSpec spec{kDefaultDelta, HeadSet{{0, 2}, {2, 1}, {3, 0}}, HighlightIndexSet{4, 5, 6, 7, 8}};
  for (const SteeringSpec* s : {static_cast<const SteeringSpec*>(nullptr), &spec}) {
    GenerationParams p;
    p.max_new_tokens = 8;
    p.capture_logits = true;
    const auto r = m.generate(prompt, p, s);
    std::vector<int> seq = prompt.token_ids;
    seq.insert(seq.end(), r.token_ids.begin(), r.token_ids.end());
    const Matrix full = m.forward_full(seq, s);
    for (std::size_t step = 0; step < r.step_logits.size(); ++step) {
      const auto row = full.row(prompt.size() - 1 + step);
      for (std::size_t v = 0; v < row.size(); ++v) {
        CHECK(std::abs(row[v] - r.step_logits[step][v]) < 1e-4);
      }
    }
  }
}

TEST_CASE("concurrent generations over one model agree") {
  const Model& m = toy_model();
  const auto prompt = tokenize("shared model, private caches");
  GenerationParams p;
  p.max_new_tokens = 12;
  const auto expected = m.generate(prompt, p).token_ids;
  std::vector<std::vector<int>> got(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] { got[t] = m.generate(prompt, p).token_ids; });
  }
  for (auto& t : threads) t.join();
  for (const auto& g : got) CHECK(g == expected);
}
