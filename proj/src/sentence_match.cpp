#include <autopasta/sentence_match.hpp>

#include <autopasta/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace autopasta {

namespace {

// Similarities closer than this are ties; absorbs rounding between equal cosines.
constexpr double kTieTolerance = 1e-12;

}  // namespace

HashedBagOfTokens::HashedBagOfTokens(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw ArgumentError("embedding dimension must be positive");
}

std::vector<std::string> HashedBagOfTokens::tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    if (std::isspace(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::size_t HashedBagOfTokens::bucket(std::string_view token) const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char ch : token) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(hash % dimension_);
}

EmbeddingVector HashedBagOfTokens::embed(std::string_view text) const {
  EmbeddingVector v(dimension_, 0.0);
  for (const auto& tok : tokens(text)) v[bucket(tok)] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

ExternalEmbeddings ExternalEmbeddings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embedding file " + path.string());
  ExternalEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string() ||
        !rec.contains("vector") || !rec["vector"].is_array()) {
      throw ParseError("embedding record needs \"text\" and \"vector\"", line_no);
    }
    EmbeddingVector vec;
    for (const auto& x : rec["vector"]) {
      if (!x.is_number()) throw ParseError("embedding vector entry is not a number", line_no);
      const double value = x.get<double>();
      if (!std::isfinite(value)) throw ParseError("embedding vector entry is not finite", line_no);
      vec.push_back(value);
    }
    if (vec.empty()) throw ParseError("embedding vector is empty", line_no);
    if (out.dimension_ == 0) out.dimension_ = vec.size();
    if (vec.size() != out.dimension_) {
      throw ParseError("embedding dimension " + std::to_string(vec.size()) + " differs from " +
                           std::to_string(out.dimension_),
                       line_no);
    }
    out.vectors_[rec["text"].get<std::string>()] = std::move(vec);
  }
  return out;
}

EmbeddingVector ExternalEmbeddings::embed(std::string_view text) const {
  const auto it = vectors_.find(std::string(text));
  if (it == vectors_.end()) {
    throw LookupError("no external embedding for text: \"" + std::string(text.substr(0, 80)) + "\"");
  }
  return it->second;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SentenceMatch match_key_sentence(std::string_view generation,
                                 std::span<const SentenceSpan> sentences,
                                 const EmbeddingProvider& provider) {
  if (sentences.empty()) throw ArgumentError("cannot match against an empty sentence list");
  const EmbeddingVector query = provider.embed(generation);
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const double sim = cosine_similarity(query, provider.embed(sentences[i].text));
    if (sim > best_sim + kTieTolerance) {
      best_sim = sim;
      best = i;
    }
  }
  return {sentences[best], best_sim};
}

std::vector<SentenceSpan> match_per_hop(std::span<const HopGeneration> generations,
                                        std::span<const SentenceSpan> sentences,
                                        const EmbeddingProvider& provider) {
  if (sentences.empty()) throw ArgumentError("cannot match against an empty sentence list");
  std::vector<SentenceSpan> out;
  for (const auto& gen : generations) {
    std::vector<SentenceSpan> pool;
    if (gen.hop_id) {
      for (const auto& s : sentences) {
        if (s.hop_id == gen.hop_id) pool.push_back(s);
      }
    }
    const SentenceMatch m = pool.empty() ? match_key_sentence(gen.text, sentences, provider)
                                         : match_key_sentence(gen.text, pool, provider);
    const bool seen = std::any_of(out.begin(), out.end(), [&](const SentenceSpan& s) {
      return s.index == m.sentence.index;
    });
    if (!seen) out.push_back(m.sentence);
  }
  return out;
}

}  // namespace autopasta
