#pragma once

// Match-back of a free-text key-sentence generation onto the original
// context sentences by embedding cosine similarity.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace autopasta {

struct SentenceSpan {
  std::string text;
  std::size_t index = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::optional<std::string> hop_id;

  friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

using EmbeddingVector = std::vector<double>;

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dimension() const = 0;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
};

/// Lowercased, punctuation-stripped tokens hashed (FNV-1a) into a fixed number
/// of buckets, counted, then L2-normalized. Order-invariant by construction.
class HashedBagOfTokens final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDefaultDimension = 4096;

  explicit HashedBagOfTokens(std::size_t dimension = kDefaultDimension);

  std::size_t dimension() const override { return dimension_; }
  EmbeddingVector embed(std::string_view text) const override;

  static std::vector<std::string> tokens(std::string_view text);
  std::size_t bucket(std::string_view token) const;

 private:
  std::size_t dimension_;
};

/// Vectors precomputed offline, one JSON object per line:
/// {"text": "...", "vector": [..]}. Unknown texts raise LookupError.
class ExternalEmbeddings final : public EmbeddingProvider {
 public:
  static ExternalEmbeddings load(const std::filesystem::path& path);

  std::size_t dimension() const override { return dimension_; }
  EmbeddingVector embed(std::string_view text) const override;
  std::size_t size() const noexcept { return vectors_.size(); }

 private:
  std::size_t dimension_ = 0;
  std::unordered_map<std::string, EmbeddingVector> vectors_;
};

/// Cosine similarity clamped to [-1, 1]; zero if either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct SentenceMatch {
  SentenceSpan sentence;
  double similarity = 0.0;
};

/// Most similar sentence to `generation`, ties to the lowest position in `sentences`.
/// Similarities within 1e-12 of each other count as ties.
/// Throws ArgumentError on an empty sentence list.
SentenceMatch match_key_sentence(std::string_view generation,
                                 std::span<const SentenceSpan> sentences,
                                 const EmbeddingProvider& provider);

struct HopGeneration {
  std::optional<std::string> hop_id;
  std::string text;
};

/// One match per hop, restricted to that hop's sentences when it is labelled
/// and has any. Repeated matches are collapsed, keeping first-seen order.
std::vector<SentenceSpan> match_per_hop(std::span<const HopGeneration> generations,
                                        std::span<const SentenceSpan> sentences,
                                        const EmbeddingProvider& provider);

}  // namespace autopasta
