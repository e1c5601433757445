#include <autopasta/tokenizer.hpp>

#include <autopasta/error.hpp>

namespace autopasta {

TokenizedPrompt tokenize(std::string_view text) {
  TokenizedPrompt out;
  out.token_ids.reserve(text.size());
  out.offsets.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out.token_ids.push_back(static_cast<unsigned char>(text[i]));
    out.offsets.push_back({i, i + 1});
  }
  return out;
}

std::string detokenize(std::span<const int> token_ids) {
  std::string out;
  out.reserve(token_ids.size());
  for (int id : token_ids) {
    if (id < 0 || id >= kByteVocabSize) {
      throw BoundsError("token id " + std::to_string(id) + " is not a byte token");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace autopasta
