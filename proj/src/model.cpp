#include <autopasta/model.hpp>

#include <autopasta/error.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

namespace autopasta {

namespace {

constexpr double kLayerNormEps = 1e-5;

// out = x * w, four rows of w per pass so each output element is loaded once per pass.
void matvec(std::span<const double> x, const Matrix& w, std::span<double> out) {
  const std::size_t rows = w.rows(), cols = w.cols();
  double* __restrict o = out.data();
  std::fill(o, o + cols, 0.0);
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double x0 = x[r], x1 = x[r + 1], x2 = x[r + 2], x3 = x[r + 3];
    const double* __restrict w0 = w.row(r).data();
    const double* __restrict w1 = w.row(r + 1).data();
    const double* __restrict w2 = w.row(r + 2).data();
    const double* __restrict w3 = w.row(r + 3).data();
    for (std::size_t c = 0; c < cols; ++c) o[c] += (x0 * w0[c] + x1 * w1[c]) + (x2 * w2[c] + x3 * w3[c]);
  }
  for (; r < rows; ++r) {
    const double xr = x[r];
    const double* __restrict wr = w.row(r).data();
    for (std::size_t c = 0; c < cols; ++c) o[c] += xr * wr[c];
  }
}

// Four independent accumulators break the add dependency chain.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t t = 0;
  for (; t + 4 <= n; t += 4) {
    s0 += a[t] * b[t];
    s1 += a[t + 1] * b[t + 1];
    s2 += a[t + 2] * b[t + 2];
    s3 += a[t + 3] * b[t + 3];
  }
  for (; t < n; ++t) s0 += a[t] * b[t];
  return (s0 + s1) + (s2 + s3);
}

void add_bias(std::span<double> x, std::span<const double> bias) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += bias[i];
}

void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> out) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

double gelu(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + 0.044715 * x * x * x)));
}

void logits_from_hidden(const ModelWeights& w, std::span<const double> hidden,
                        std::span<double> normed, std::span<double> logits) {
  layer_norm(hidden, w.final_gain, w.final_bias, normed);
  for (std::size_t v = 0; v < w.token_embedding.rows(); ++v) {
    const auto emb = w.token_embedding.row(v);
    double s = 0.0;
    for (std::size_t c = 0; c < normed.size(); ++c) s += normed[c] * emb[c];
    logits[v] = s;
  }
}

int argmax(std::span<const double> logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Per-generation key/value cache plus scratch buffers.
struct DecodeState {
  std::vector<Matrix> keys;    // per layer: max_len x model_dim
  std::vector<Matrix> values;  // per layer: max_len x model_dim
  std::size_t length = 0;

  std::vector<double> x, normed, q, k, v, attn, proj, ffn_hidden, scores, weights, bias;

  DecodeState(const ModelConfig& cfg, std::size_t capacity) {
    const auto d = static_cast<std::size_t>(cfg.model_dim);
    for (int l = 0; l < cfg.num_layers; ++l) {
      keys.emplace_back(capacity, d);
      values.emplace_back(capacity, d);
    }
    x.resize(d);
    normed.resize(d);
    q.resize(d);
    k.resize(d);
    v.resize(d);
    attn.resize(d);
    proj.resize(d);
    ffn_hidden.resize(static_cast<std::size_t>(cfg.ffn_width()));
    scores.reserve(capacity);
    weights.reserve(capacity);
    bias.reserve(capacity);
  }
};

using RowSink = std::function<void(HeadLocation, std::span<const double>)>;

// Runs one position through every layer, appending its keys and values to the
// cache. Leaves the final residual stream in state.x.
void forward_position(const ModelConfig& cfg, const ModelWeights& w, int token,
                      DecodeState& st, const SteeringSpec* spec,
                      const std::vector<bool>& highlight_mask, const RowSink& sink) {
  const auto d = static_cast<std::size_t>(cfg.model_dim);
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t pos = st.length;
  const std::size_t n_keys = pos + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t c = 0; c < d; ++c) {
    st.x[c] = w.token_embedding(static_cast<std::size_t>(token), c) + w.position_embedding(pos, c);
  }

  const bool any_steering = spec != nullptr && !spec->head_set.empty();
  if (any_steering) {
    st.bias.assign(n_keys, -spec->delta);
    for (std::size_t j = 0; j < n_keys && j < highlight_mask.size(); ++j) {
      if (highlight_mask[j]) st.bias[j] = 0.0;
    }
  }
  st.scores.resize(n_keys);
  st.weights.resize(n_keys);

  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
    layer_norm(st.x, lw.ln1_gain, lw.ln1_bias, st.normed);
    matvec(st.normed, lw.wq, st.q);
    matvec(st.normed, lw.wk, st.k);
    matvec(st.normed, lw.wv, st.v);
    auto& keys = st.keys[static_cast<std::size_t>(l)];
    auto& values = st.values[static_cast<std::size_t>(l)];
    std::copy(st.k.begin(), st.k.end(), keys.row(pos).begin());
    std::copy(st.v.begin(), st.v.end(), values.row(pos).begin());

    for (int h = 0; h < cfg.num_heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * dh;
      for (std::size_t j = 0; j < n_keys; ++j) {
        st.scores[j] = dot(st.q.data() + off, keys.row(j).data() + off, dh) * scale;
      }
      const HeadLocation loc{l, h};
      const bool steered = any_steering && spec->steers(loc);
      softmax_row(st.scores, steered ? std::span<const double>(st.bias) : std::span<const double>{},
                  st.weights);
      if (sink) sink(loc, st.weights);
      double* __restrict acc = st.attn.data() + off;
      std::fill(acc, acc + dh, 0.0);
      std::size_t j = 0;
      for (; j + 4 <= n_keys; j += 4) {
        const double a0 = st.weights[j], a1 = st.weights[j + 1];
        const double a2 = st.weights[j + 2], a3 = st.weights[j + 3];
        const double* __restrict v0 = values.row(j).data() + off;
        const double* __restrict v1 = values.row(j + 1).data() + off;
        const double* __restrict v2 = values.row(j + 2).data() + off;
        const double* __restrict v3 = values.row(j + 3).data() + off;
        for (std::size_t t = 0; t < dh; ++t) acc[t] += (a0 * v0[t] + a1 * v1[t]) + (a2 * v2[t] + a3 * v3[t]);
      }
      for (; j < n_keys; ++j) {
        const double a = st.weights[j];
        const double* __restrict v = values.row(j).data() + off;
        for (std::size_t t = 0; t < dh; ++t) acc[t] += a * v[t];
      }
    }
    matvec(st.attn, lw.wo, st.proj);
    for (std::size_t c = 0; c < d; ++c) st.x[c] += st.proj[c];

    layer_norm(st.x, lw.ln2_gain, lw.ln2_bias, st.normed);
    matvec(st.normed, lw.ffn_in, st.ffn_hidden);
    add_bias(st.ffn_hidden, lw.ffn_in_bias);
    for (double& hval : st.ffn_hidden) hval = gelu(hval);
    matvec(st.ffn_hidden, lw.ffn_out, st.proj);
    add_bias(st.proj, lw.ffn_out_bias);
    for (std::size_t c = 0; c < d; ++c) st.x[c] += st.proj[c];
  }
  st.length = pos + 1;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double mean,
                                  double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

// Checkpoint tensors in a fixed order with their expected shapes.
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> data;
};

std::vector<TensorRef> tensor_table(const ModelConfig& cfg, ModelWeights& w) {
  const auto d = static_cast<std::size_t>(cfg.model_dim);
  const auto f = static_cast<std::size_t>(cfg.ffn_width());
  std::vector<TensorRef> out;
  out.push_back({"token_embedding", {static_cast<std::size_t>(cfg.vocab_size), d},
                 w.token_embedding.data()});
  out.push_back({"position_embedding", {static_cast<std::size_t>(cfg.max_sequence_length), d},
                 w.position_embedding.data()});
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gain", {d}, lw.ln1_gain});
    out.push_back({p + "ln1.bias", {d}, lw.ln1_bias});
    out.push_back({p + "attn.wq", {d, d}, lw.wq.data()});
    out.push_back({p + "attn.wk", {d, d}, lw.wk.data()});
    out.push_back({p + "attn.wv", {d, d}, lw.wv.data()});
    out.push_back({p + "attn.wo", {d, d}, lw.wo.data()});
    out.push_back({p + "ln2.gain", {d}, lw.ln2_gain});
    out.push_back({p + "ln2.bias", {d}, lw.ln2_bias});
    out.push_back({p + "ffn.w_in", {d, f}, lw.ffn_in.data()});
    out.push_back({p + "ffn.b_in", {f}, lw.ffn_in_bias});
    out.push_back({p + "ffn.w_out", {f, d}, lw.ffn_out.data()});
    out.push_back({p + "ffn.b_out", {d}, lw.ffn_out_bias});
  }
  out.push_back({"final.gain", {d}, w.final_gain});
  out.push_back({"final.bias", {d}, w.final_bias});
  return out;
}

ModelWeights zero_weights(const ModelConfig& cfg) {
  const auto d = static_cast<std::size_t>(cfg.model_dim);
  const auto f = static_cast<std::size_t>(cfg.ffn_width());
  ModelWeights w;
  w.token_embedding = Matrix(static_cast<std::size_t>(cfg.vocab_size), d);
  w.position_embedding = Matrix(static_cast<std::size_t>(cfg.max_sequence_length), d);
  w.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& lw : w.layers) {
    lw.ln1_gain.assign(d, 0.0);
    lw.ln1_bias.assign(d, 0.0);
    lw.wq = lw.wk = lw.wv = lw.wo = Matrix(d, d);
    lw.ln2_gain.assign(d, 0.0);
    lw.ln2_bias.assign(d, 0.0);
    lw.ffn_in = Matrix(d, f);
    lw.ffn_in_bias.assign(f, 0.0);
    lw.ffn_out = Matrix(f, d);
    lw.ffn_out_bias.assign(d, 0.0);
  }
  w.final_gain.assign(d, 0.0);
  w.final_bias.assign(d, 0.0);
  return w;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(shape[i]);
  }
  return s;
}

template <typename T>
T from_little_endian(const unsigned char* bytes) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers <= 0 || num_heads <= 0 || model_dim <= 0 || vocab_size <= 0 ||
      max_sequence_length <= 0 || ffn_dim < 0) {
    throw ArgumentError("model config dimensions must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw ArgumentError("model_dim " + std::to_string(model_dim) + " is not divisible by " +
                        std::to_string(num_heads) + " heads");
  }
  if (vocab_size < kByteVocabSize) {
    throw ArgumentError("vocab_size must cover the 256 byte tokens");
  }
  if (eos_token < 0 || eos_token >= vocab_size) {
    throw ArgumentError("eos_token outside the vocabulary");
  }
}

Model::Model(ModelConfig config, ModelWeights weights)
    : config_(config), weights_(std::move(weights)) {}

Model Model::init_random(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto f = static_cast<std::size_t>(config.ffn_width());
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(seed);

  ModelWeights w;
  w.token_embedding = random_matrix(rng, static_cast<std::size_t>(config.vocab_size), d, 1.0);
  w.position_embedding =
      random_matrix(rng, static_cast<std::size_t>(config.max_sequence_length), d, 0.5);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerWeights lw;
    lw.ln1_gain = random_vector(rng, d, 1.0, 0.1);
    lw.ln1_bias = random_vector(rng, d, 0.0, 0.1);
    lw.wq = random_matrix(rng, d, d, 2.0 * proj_std);
    lw.wk = random_matrix(rng, d, d, 2.0 * proj_std);
    lw.wv = random_matrix(rng, d, d, proj_std);
    lw.wo = random_matrix(rng, d, d, proj_std);
    lw.ln2_gain = random_vector(rng, d, 1.0, 0.1);
    lw.ln2_bias = random_vector(rng, d, 0.0, 0.1);
    lw.ffn_in = random_matrix(rng, d, f, proj_std);
    lw.ffn_in_bias = random_vector(rng, f, 0.0, 0.1);
    lw.ffn_out = random_matrix(rng, f, d, 0.5 / std::sqrt(static_cast<double>(f)));
    lw.ffn_out_bias = random_vector(rng, d, 0.0, 0.1);
    w.layers.push_back(std::move(lw));
  }
  w.final_gain = random_vector(rng, d, 1.0, 0.1);
  w.final_bias = random_vector(rng, d, 0.0, 0.1);
  return Model(config, std::move(w));
}

Model Model::from_weights(const ModelConfig& config, ModelWeights weights) {
  config.validate();
  Model m(config, std::move(weights));
  m.check_shapes();
  return m;
}

void Model::check_shapes() const {
  const ModelConfig& cfg = config_;
  const ModelWeights expected = zero_weights(cfg);
  auto same = [](const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
  };
  auto fail = [](const std::string& what) { throw LoadError("weight shape mismatch: " + what); };
  if (!same(weights_.token_embedding, expected.token_embedding)) fail("token_embedding");
  if (!same(weights_.position_embedding, expected.position_embedding)) fail("position_embedding");
  if (weights_.layers.size() != expected.layers.size()) fail("layer count");
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& a = weights_.layers[l];
    const auto& b = expected.layers[l];
    const std::string p = "layer " + std::to_string(l) + " ";
    if (!same(a.wq, b.wq) || !same(a.wk, b.wk) || !same(a.wv, b.wv) || !same(a.wo, b.wo)) {
      fail(p + "attention projection");
    }
    if (!same(a.ffn_in, b.ffn_in) || !same(a.ffn_out, b.ffn_out)) fail(p + "feed-forward");
    if (a.ln1_gain.size() != b.ln1_gain.size() || a.ln1_bias.size() != b.ln1_bias.size() ||
        a.ln2_gain.size() != b.ln2_gain.size() || a.ln2_bias.size() != b.ln2_bias.size() ||
        a.ffn_in_bias.size() != b.ffn_in_bias.size() ||
        a.ffn_out_bias.size() != b.ffn_out_bias.size()) {
      fail(p + "vector parameter");
    }
  }
  if (weights_.final_gain.size() != expected.final_gain.size() ||
      weights_.final_bias.size() != expected.final_bias.size()) {
    fail("final norm");
  }
}

GenerationResult Model::generate(const TokenizedPrompt& prompt, const GenerationParams& params,
                                 const SteeringSpec* spec) const {
  if (params.max_new_tokens < 1) throw ArgumentError("max_new_tokens must be at least 1");
  const std::size_t n = prompt.size();
  if (n == 0) throw ArgumentError("cannot generate from an empty prompt");
  const std::size_t capacity = n + static_cast<std::size_t>(params.max_new_tokens);
  if (capacity > static_cast<std::size_t>(config_.max_sequence_length)) {
    throw CapacityError("prompt of " + std::to_string(n) + " tokens plus " +
                        std::to_string(params.max_new_tokens) +
                        " new tokens exceeds the context window of " +
                        std::to_string(config_.max_sequence_length));
  }
  for (int id : prompt.token_ids) {
    if (id < 0 || id >= config_.vocab_size) throw BoundsError("prompt token outside vocabulary");
  }
  std::vector<bool> highlight_mask;
  if (spec != nullptr) {
    spec->validate();
    spec->head_set.check_bounds(config_.num_layers, config_.num_heads);
    spec->highlight.check_bounds(n);
    highlight_mask = spec->highlight.mask(n);
  }

  DecodeState st(config_, capacity);
  GenerationResult result;

  // Snapshot capture: step 0 rows are collected into one n x n matrix per head.
  auto captured = [&](HeadLocation loc) {
    return params.capture_attention &&
           (params.capture_heads.empty() || params.capture_heads.contains(loc));
  };
  int step = 0;
  std::map<HeadLocation, std::size_t> prefill_slot;
  RowSink sink;
  if (params.capture_attention) {
    for (int l = 0; l < config_.num_layers; ++l) {
      for (int h = 0; h < config_.num_heads; ++h) {
        const HeadLocation loc{l, h};
        if (!captured(loc)) continue;
        prefill_slot[loc] = result.snapshots.size();
        result.snapshots.push_back({0, loc, 0, Matrix(n, n)});
      }
    }
    sink = [&](HeadLocation loc, std::span<const double> row) {
      if (!captured(loc)) return;
      const std::size_t query = st.length;
      if (step == 0) {
        auto dst = result.snapshots[prefill_slot[loc]].weights.row(query);
        std::copy(row.begin(), row.end(), dst.begin());
      } else {
        AttentionSnapshot snap{step, loc, query, Matrix(1, row.size())};
        std::copy(row.begin(), row.end(), snap.weights.row(0).begin());
        result.snapshots.push_back(std::move(snap));
      }
    };
  }

  for (std::size_t i = 0; i < n; ++i) {
    forward_position(config_, weights_, prompt.token_ids[i], st, spec, highlight_mask, sink);
  }

  std::vector<double> logits(static_cast<std::size_t>(config_.vocab_size));
  std::vector<double> normed(static_cast<std::size_t>(config_.model_dim));
  for (int produced = 0; produced < params.max_new_tokens; ++produced) {
    logits_from_hidden(weights_, st.x, normed, logits);
    if (params.capture_logits) result.step_logits.push_back(logits);
    const int next = argmax(logits);
    if (next == config_.eos_token || next >= kByteVocabSize) {
      result.stopped_at_eos = true;
      break;
    }
    result.token_ids.push_back(next);
    if (produced + 1 == params.max_new_tokens) break;
    ++step;
    forward_position(config_, weights_, next, st, spec, highlight_mask, sink);
  }
  result.text = detokenize(result.token_ids);
  return result;
}

Matrix Model::forward_full(std::span<const int> token_ids, const SteeringSpec* spec) const {
  const std::size_t n = token_ids.size();
  if (n == 0) throw ArgumentError("cannot run an empty sequence");
  if (n > static_cast<std::size_t>(config_.max_sequence_length)) {
    throw CapacityError("sequence exceeds the context window");
  }
  if (spec != nullptr) {
    spec->validate();
    spec->head_set.check_bounds(config_.num_layers, config_.num_heads);
    spec->highlight.check_bounds(n);
  }
  const auto d = static_cast<std::size_t>(config_.model_dim);
  const auto dh = static_cast<std::size_t>(config_.head_dim());
  const auto f = static_cast<std::size_t>(config_.ffn_width());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tok = static_cast<std::size_t>(token_ids[i]);
    for (std::size_t c = 0; c < d; ++c) {
      x(i, c) = weights_.token_embedding(tok, c) + weights_.position_embedding(i, c);
    }
  }

  Matrix normed(n, d), q(n, d), k(n, d), v(n, d), attn(n, d), hidden(n, f);
  std::vector<double> proj(d);
  for (int l = 0; l < config_.num_layers; ++l) {
    const LayerWeights& lw = weights_.layers[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < n; ++i) {
      layer_norm(x.row(i), lw.ln1_gain, lw.ln1_bias, normed.row(i));
      matvec(normed.row(i), lw.wq, q.row(i));
      matvec(normed.row(i), lw.wk, k.row(i));
      matvec(normed.row(i), lw.wv, v.row(i));
    }
    for (int h = 0; h < config_.num_heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * dh;
      Matrix scores(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += q(i, off + t) * k(j, off + t);
          scores(i, j) = s * scale;
        }
      }
      const Matrix probs = spec != nullptr
                               ? steered_attention_weights(scores, *spec, {l, h}, true)
                               : softmax_rows(scores, true);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < dh; ++t) attn(i, off + t) = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double a = probs(i, j);
          for (std::size_t t = 0; t < dh; ++t) attn(i, off + t) += a * v(j, off + t);
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      matvec(attn.row(i), lw.wo, proj);
      for (std::size_t c = 0; c < d; ++c) x(i, c) += proj[c];
      layer_norm(x.row(i), lw.ln2_gain, lw.ln2_bias, normed.row(i));
      matvec(normed.row(i), lw.ffn_in, hidden.row(i));
      add_bias(hidden.row(i), lw.ffn_in_bias);
      for (double& hval : hidden.row(i)) hval = gelu(hval);
      matvec(hidden.row(i), lw.ffn_out, proj);
      add_bias(proj, lw.ffn_out_bias);
      for (std::size_t c = 0; c < d; ++c) x(i, c) += proj[c];
    }
  }

  Matrix logits(n, static_cast<std::size_t>(config_.vocab_size));
  std::vector<double> final_normed(d);
  for (std::size_t i = 0; i < n; ++i) {
    logits_from_hidden(weights_, x.row(i), final_normed, logits.row(i));
  }
  return logits;
}

void Model::save_checkpoint(const std::filesystem::path& manifest) const {
  std::filesystem::path blob = manifest;
  blob.replace_extension(".bin");
  ModelWeights copy = weights_;
  const auto table = tensor_table(config_, copy);

  std::ofstream bin(blob, std::ios::binary);
  if (!bin) throw LoadError("cannot write checkpoint blob " + blob.string());
  std::ofstream man(manifest);
  if (!man) throw LoadError("cannot write checkpoint manifest " + manifest.string());

  man << "# autopasta checkpoint v1\n";
  man << "config num_layers=" << config_.num_layers << " num_heads=" << config_.num_heads
      << " model_dim=" << config_.model_dim << " vocab_size=" << config_.vocab_size
      << " max_sequence_length=" << config_.max_sequence_length
      << " ffn_dim=" << config_.ffn_width() << " eos_token=" << config_.eos_token << '\n';
  man << "dtype f64\n";
  man << "blob " << blob.filename().string() << '\n';
  std::size_t offset = 0;
  for (const auto& t : table) {
    man << "tensor " << t.name << ' ' << shape_string(t.shape) << ' ' << offset << '\n';
    for (double value : t.data) {
      unsigned char buf[sizeof(double)];
      std::memcpy(buf, &value, sizeof(double));
      if constexpr (std::endian::native == std::endian::big) {
        std::reverse(buf, buf + sizeof(double));
      }
      bin.write(reinterpret_cast<const char*>(buf), sizeof(double));
    }
    offset += t.data.size() * sizeof(double);
  }
  if (!bin || !man) throw LoadError("failed writing checkpoint");
}

Model Model::load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream man(manifest);
  if (!man) throw LoadError("cannot open checkpoint manifest " + manifest.string());

  ModelConfig cfg;
  std::string dtype = "f64";
  std::filesystem::path blob_path;
  struct Entry {
    std::string shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> entries;

  std::string line;
  std::size_t line_no = 0;
  bool saw_config = false;
  while (std::getline(man, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      saw_config = true;
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw LoadError("manifest line " + std::to_string(line_no) + ": bad config field");
        const std::string key = kv.substr(0, eq);
        int value = 0;
        try {
          value = std::stoi(kv.substr(eq + 1));
        } catch (const std::exception&) {
          throw LoadError("manifest line " + std::to_string(line_no) + ": bad value for " + key);
        }
        if (key == "num_layers") cfg.num_layers = value;
        else if (key == "num_heads") cfg.num_heads = value;
        else if (key == "model_dim") cfg.model_dim = value;
        else if (key == "vocab_size") cfg.vocab_size = value;
        else if (key == "max_sequence_length") cfg.max_sequence_length = value;
        else if (key == "ffn_dim") cfg.ffn_dim = value;
        else if (key == "eos_token") cfg.eos_token = value;
        else throw LoadError("manifest line " + std::to_string(line_no) + ": unknown config key " + key);
      }
    } else if (kind == "dtype") {
      ls >> dtype;
      if (dtype != "f32" && dtype != "f64") throw LoadError("unsupported checkpoint dtype " + dtype);
    } else if (kind == "blob") {
      std::string name;
      ls >> name;
      blob_path = manifest.parent_path() / name;
    } else if (kind == "tensor") {
      std::string name, shape;
      std::size_t offset = 0;
      if (!(ls >> name >> shape >> offset)) {
        throw LoadError("manifest line " + std::to_string(line_no) + ": malformed tensor entry");
      }
      entries[name] = {shape, offset};
    } else {
      throw LoadError("manifest line " + std::to_string(line_no) + ": unknown record " + kind);
    }
  }
  if (!saw_config) throw LoadError("checkpoint manifest has no config line");
  if (blob_path.empty()) throw LoadError("checkpoint manifest has no blob line");
  try {
    cfg.validate();
  } catch (const ArgumentError& e) {
    throw LoadError(std::string("checkpoint config invalid: ") + e.what());
  }

  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw LoadError("cannot open checkpoint blob " + blob_path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                         std::istreambuf_iterator<char>());
  const std::size_t width = dtype == "f32" ? 4 : 8;

  ModelWeights w = zero_weights(cfg);
  for (auto& t : tensor_table(cfg, w)) {
    const auto it = entries.find(t.name);
    if (it == entries.end()) throw LoadError("checkpoint is missing tensor " + t.name);
    if (it->second.shape != shape_string(t.shape)) {
      throw LoadError("tensor " + t.name + " has shape " + it->second.shape + ", expected " +
                      shape_string(t.shape));
    }
    const std::size_t begin = it->second.offset;
    if (begin + t.data.size() * width > bytes.size()) {
      throw LoadError("tensor " + t.name + " extends past the end of the blob");
    }
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const unsigned char* p = bytes.data() + begin + i * width;
      t.data[i] = width == 4 ? static_cast<double>(from_little_endian<float>(p))
                             : from_little_endian<double>(p);
    }
  }
  return Model(cfg, std::move(w));
}

}  // namespace autopasta
