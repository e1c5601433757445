#pragma once

// Minimal pre-norm decoder-only transformer with a per-head steering hook.

#include <autopasta/matrix.hpp>
#include <autopasta/steering.hpp>
#include <autopasta/tokenizer.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace autopasta {

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int model_dim = 64;
  int vocab_size = kByteVocabSize;
  int max_sequence_length = 2048;
  /// Feed-forward width; 0 means 4 * model_dim.
  int ffn_dim = 0;
  /// Generation stops when this id is produced.
  int eos_token = 0;

  int head_dim() const { return model_dim / num_heads; }
  int ffn_width() const { return ffn_dim > 0 ? ffn_dim : 4 * model_dim; }

  /// Throws ArgumentError when the configuration is inconsistent.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  std::vector<double> ln1_gain, ln1_bias;
  Matrix wq, wk, wv;  // model_dim x model_dim; head h owns columns [h*d_h, (h+1)*d_h)
  Matrix wo;          // model_dim x model_dim
  std::vector<double> ln2_gain, ln2_bias;
  Matrix ffn_in;  // model_dim x ffn
  std::vector<double> ffn_in_bias;
  Matrix ffn_out;  // ffn x model_dim
  std::vector<double> ffn_out_bias;
};

struct ModelWeights {
  Matrix token_embedding;     // vocab x model_dim, tied with the output projection
  Matrix position_embedding;  // max_sequence_length x model_dim
  std::vector<LayerWeights> layers;
  std::vector<double> final_gain, final_bias;
};

struct GenerationParams {
  int max_new_tokens = 16;
  /// Record attention rows for every (layer, head) at every step.
  bool capture_attention = false;
  /// Restrict attention capture to these heads (empty: all heads).
  HeadSet capture_heads;
  bool capture_logits = false;
};

/// Attention rows recorded at one generation step. Step 0 is the prefill and
/// holds one row per prompt position; later steps hold a single row.
struct AttentionSnapshot {
  int step = 0;
  HeadLocation head;
  std::size_t first_query = 0;
  Matrix weights;  // rows = queries, cols = keys up to the last query (zero where masked)
};

struct GenerationResult {
  std::vector<int> token_ids;
  std::string text;
  bool stopped_at_eos = false;
  /// Logits used to pick each generated token, when requested.
  std::vector<std::vector<double>> step_logits;
  std::vector<AttentionSnapshot> snapshots;
};

/// Immutable model. Safe to share across threads; each generation owns its cache.
class Model {
 public:
  static Model init_random(const ModelConfig& config, std::uint64_t seed);
  /// Throws LoadError on a missing file or shape mismatch.
  static Model load_checkpoint(const std::filesystem::path& manifest);
  static Model from_weights(const ModelConfig& config, ModelWeights weights);

  /// Writes `<manifest>` and a little-endian float64 blob next to it.
  void save_checkpoint(const std::filesystem::path& manifest) const;

  const ModelConfig& config() const noexcept { return config_; }
  const ModelWeights& weights() const noexcept { return weights_; }

  /// Greedy decoding. When `spec` is given, its heads are steered at every step
  /// with the highlight fixed to prompt positions.
  GenerationResult generate(const TokenizedPrompt& prompt, const GenerationParams& params,
                            const SteeringSpec* spec = nullptr) const;

  /// Whole-sequence forward pass through dense matrices; returns logits for
  /// every position (rows) without any cache.
  Matrix forward_full(std::span<const int> token_ids, const SteeringSpec* spec = nullptr) const;

 private:
  Model(ModelConfig config, ModelWeights weights);
  void check_shapes() const;

  ModelConfig config_;
  ModelWeights weights_;
};

}  // namespace autopasta
