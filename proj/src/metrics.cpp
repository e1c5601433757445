#include <autopasta/metrics.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace autopasta {

namespace {

std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(c)));
  }
  std::string out;
  for (const auto& tok : split_whitespace(lowered)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

double exact_match(std::string_view prediction, std::span<const std::string> answers) {
  const std::string pred = normalize_answer(prediction);
  for (const auto& gold : answers) {
    if (normalize_answer(gold) == pred) return 1.0;
  }
  return 0.0;
}

double token_f1_single(std::string_view prediction, std::string_view gold) {
  const auto pred_tokens = split_whitespace(normalize_answer(prediction));
  const auto gold_tokens = split_whitespace(normalize_answer(gold));
  if (pred_tokens.empty() && gold_tokens.empty()) return 1.0;
  if (pred_tokens.empty() || gold_tokens.empty()) return 0.0;

  std::map<std::string, int> gold_counts;
  for (const auto& t : gold_tokens) ++gold_counts[t];
  int common = 0;
  for (const auto& t : pred_tokens) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred_tokens.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold_tokens.size());
  return 2.0 * precision * recall / (precision + recall);
}

double token_f1(std::string_view prediction, std::span<const std::string> answers) {
  double best = 0.0;
  for (const auto& gold : answers) best = std::max(best, token_f1_single(prediction, gold));
  return best;
}

}  // namespace autopasta
