#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace autopasta {

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

/// 1 if the normalized prediction equals any normalized gold answer, else 0.
double exact_match(std::string_view prediction, std::span<const std::string> answers);

/// Best token-multiset F1 against any gold answer, in [0, 1].
double token_f1(std::string_view prediction, std::span<const std::string> answers);

/// F1 against a single gold answer.
double token_f1_single(std::string_view prediction, std::string_view gold);

}  // namespace autopasta
