#pragma once

// Attention steering: a constant pre-softmax bias that pushes attention mass
// toward a highlighted set of key positions at a chosen set of heads.

#include <autopasta/matrix.hpp>

#include <cmath>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace autopasta {

/// Default bias magnitude; non-highlighted keys are scaled down 100x post-softmax.
inline const double kDefaultDelta = std::log(100.0);

struct HeadLocation {
  int layer = 0;
  int head = 0;

  auto operator<=>(const HeadLocation&) const = default;
};

/// Set of (layer, head) pairs, kept sorted in lexicographic order.
class HeadSet {
 public:
  HeadSet() = default;
  /// Throws ArgumentError on duplicates.
  HeadSet(std::initializer_list<HeadLocation> members);
  explicit HeadSet(std::vector<HeadLocation> members);

  /// Returns false if already present.
  bool insert(HeadLocation loc);
  bool contains(HeadLocation loc) const;

  std::size_t size() const noexcept { return members_.size(); }
  bool empty() const noexcept { return members_.empty(); }
  const std::vector<HeadLocation>& members() const noexcept { return members_; }
  auto begin() const noexcept { return members_.begin(); }
  auto end() const noexcept { return members_.end(); }

  /// Throws BoundsError if any member falls outside [0, num_layers) x [0, num_heads).
  void check_bounds(int num_layers, int num_heads) const;

  HeadSet united(const HeadSet& other) const;

  friend bool operator==(const HeadSet&, const HeadSet&) = default;
  friend auto operator<=>(const HeadSet&, const HeadSet&) = default;

 private:
  std::vector<HeadLocation> members_;
};

/// Token positions to highlight, sorted and unique.
class HighlightIndexSet {
 public:
  HighlightIndexSet() = default;
  HighlightIndexSet(std::initializer_list<std::size_t> indices);
  explicit HighlightIndexSet(std::vector<std::size_t> indices);

  bool contains(std::size_t index) const;
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  /// Throws BoundsError unless every index is < n.
  void check_bounds(std::size_t n) const;

  /// Membership bitmap of length n.
  std::vector<bool> mask(std::size_t n) const;

  friend bool operator==(const HighlightIndexSet&, const HighlightIndexSet&) = default;

 private:
  std::vector<std::size_t> indices_;
};

struct SteeringSpec {
  double delta = kDefaultDelta;
  HeadSet head_set;
  HighlightIndexSet highlight;

  /// Throws ArgumentError unless delta is finite and positive.
  void validate() const;
  bool steers(HeadLocation loc) const { return head_set.contains(loc); }
};

/// Bias row: 0 at highlighted positions, -delta elsewhere.
std::vector<double> build_bias_row(const HighlightIndexSet& highlight, std::size_t n,
                                   double delta);

/// Stabilized softmax of `scores + bias` into `out`. An empty `bias` means none.
/// All three spans describe the same reachable key positions.
void softmax_row(std::span<const double> scores, std::span<const double> bias,
                 std::span<double> out);

/// Row-wise softmax of a square score matrix. With `causal`, key j > query i
/// receives exactly zero weight.
Matrix softmax_rows(const Matrix& scores, bool causal);

/// Row-wise softmax of (scores + bias) when `head` is steered, plain softmax
/// otherwise. Throws NumericError on non-finite scores.
Matrix steered_attention_weights(const Matrix& scores, const SteeringSpec& spec,
                                 HeadLocation head, bool causal);

/// Post-softmax formulation: scale non-highlighted weights by `alpha` and
/// renormalize each row. Equals the bias form with alpha = exp(-delta).
Matrix post_softmax_scaling_oracle(const Matrix& scores, const HighlightIndexSet& highlight,
                                   double alpha, bool causal);

// Head-set files are JSON arrays of [layer, head] pairs.
HeadSet read_head_set(const std::filesystem::path& path);
void write_head_set(const std::filesystem::path& path, const HeadSet& heads);
HeadSet parse_head_set(const std::string& json_text);
std::string format_head_set(const HeadSet& heads);

}  // namespace autopasta
