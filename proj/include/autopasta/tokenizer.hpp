#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace autopasta {

/// Half-open character range [begin, end).
struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool overlaps(const CharRange& other) const noexcept {
    return begin < other.end && other.begin < end;
  }
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct TokenizedPrompt {
  std::vector<int> token_ids;
  std::vector<CharRange> offsets;

  std::size_t size() const noexcept { return token_ids.size(); }
};

/// Byte-level vocabulary: ids 0..255 are raw bytes.
inline constexpr int kByteVocabSize = 256;

TokenizedPrompt tokenize(std::string_view text);

/// Throws BoundsError for ids outside the byte range.
std::string detokenize(std::span<const int> token_ids);

}  // namespace autopasta
