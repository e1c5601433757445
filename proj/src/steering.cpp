#include <autopasta/steering.hpp>

#include <autopasta/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace autopasta {

namespace {

void require_square_finite(const Matrix& scores) {
  if (scores.rows() != scores.cols()) {
    throw ArgumentError("score matrix must be square, got " + std::to_string(scores.rows()) +
                        "x" + std::to_string(scores.cols()));
  }
  for (double v : scores.data()) {
    if (!std::isfinite(v)) throw NumericError("attention scores contain a non-finite value");
  }
}

std::size_t reachable(std::size_t row, std::size_t n, bool causal) {
  return causal ? row + 1 : n;
}

}  // namespace

HeadSet::HeadSet(std::initializer_list<HeadLocation> members)
    : HeadSet(std::vector<HeadLocation>(members)) {}

HeadSet::HeadSet(std::vector<HeadLocation> members) : members_(std::move(members)) {
  std::sort(members_.begin(), members_.end());
  if (std::adjacent_find(members_.begin(), members_.end()) != members_.end()) {
    throw ArgumentError("head set contains a duplicate member");
  }
}

bool HeadSet::insert(HeadLocation loc) {
  auto it = std::lower_bound(members_.begin(), members_.end(), loc);
  if (it != members_.end() && *it == loc) return false;
  members_.insert(it, loc);
  return true;
}

bool HeadSet::contains(HeadLocation loc) const {
  return std::binary_search(members_.begin(), members_.end(), loc);
}

void HeadSet::check_bounds(int num_layers, int num_heads) const {
  for (const auto& m : members_) {
    if (m.layer < 0 || m.layer >= num_layers || m.head < 0 || m.head >= num_heads) {
      throw BoundsError("head (" + std::to_string(m.layer) + ", " + std::to_string(m.head) +
                        ") outside model with " + std::to_string(num_layers) + " layers and " +
                        std::to_string(num_heads) + " heads");
    }
  }
}

HeadSet HeadSet::united(const HeadSet& other) const {
  HeadSet out = *this;
  for (const auto& m : other) out.insert(m);
  return out;
}

HighlightIndexSet::HighlightIndexSet(std::initializer_list<std::size_t> indices)
    : HighlightIndexSet(std::vector<std::size_t>(indices)) {}

HighlightIndexSet::HighlightIndexSet(std::vector<std::size_t> indices)
    : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
}

bool HighlightIndexSet::contains(std::size_t index) const {
  return std::binary_search(indices_.begin(), indices_.end(), index);
}

void HighlightIndexSet::check_bounds(std::size_t n) const {
  if (!indices_.empty() && indices_.back() >= n) {
    throw BoundsError("highlight index " + std::to_string(indices_.back()) +
                      " out of range for sequence length " + std::to_string(n));
  }
}

std::vector<bool> HighlightIndexSet::mask(std::size_t n) const {
  std::vector<bool> out(n, false);
  for (std::size_t i : indices_) {
    if (i < n) out[i] = true;
  }
  return out;
}

void SteeringSpec::validate() const {
  if (!std::isfinite(delta) || delta <= 0.0) {
    throw ArgumentError("steering delta must be positive and finite");
  }
}

std::vector<double> build_bias_row(const HighlightIndexSet& highlight, std::size_t n,
                                   double delta) {
  if (!(delta > 0.0)) throw ArgumentError("steering delta must be positive");
  highlight.check_bounds(n);
  std::vector<double> bias(n, -delta);
  for (std::size_t i : highlight) bias[i] = 0.0;
  return bias;
}

void softmax_row(std::span<const double> scores, std::span<const double> bias,
                 std::span<double> out) {
  const std::size_t n = scores.size();
  const bool biased = !bias.empty();
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    max_logit = std::max(max_logit, biased ? scores[j] + bias[j] : scores[j]);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double logit = biased ? scores[j] + bias[j] : scores[j];
    out[j] = std::exp(logit - max_logit);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
}

Matrix softmax_rows(const Matrix& scores, bool causal) {
  require_square_finite(scores);
  const std::size_t n = scores.rows();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = reachable(i, n, causal);
    softmax_row(scores.row(i).first(m), {}, out.row(i).first(m));
  }
  return out;
}

Matrix steered_attention_weights(const Matrix& scores, const SteeringSpec& spec,
                                 HeadLocation head, bool causal) {
  if (!spec.steers(head)) return softmax_rows(scores, causal);
  spec.validate();
  require_square_finite(scores);
  const std::size_t n = scores.rows();
  const std::vector<double> bias = build_bias_row(spec.highlight, n, spec.delta);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = reachable(i, n, causal);
    softmax_row(scores.row(i).first(m), std::span(bias).first(m), out.row(i).first(m));
  }
  return out;
}

Matrix post_softmax_scaling_oracle(const Matrix& scores, const HighlightIndexSet& highlight,
                                   double alpha, bool causal) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
  require_square_finite(scores);
  const std::size_t n = scores.rows();
  highlight.check_bounds(n);
  const std::vector<bool> in_g = highlight.mask(n);
  Matrix out = softmax_rows(scores, causal);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = reachable(i, n, causal);
    auto row = out.row(i);
    double c = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!in_g[j]) row[j] *= alpha;
      c += row[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] /= c;
  }
  return out;
}

HeadSet parse_head_set(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("head set: ") + e.what(), 0);
  }
  if (!doc.is_array()) throw ParseError("head set must be a JSON array of [layer, head] pairs", 0);
  std::vector<HeadLocation> members;
  for (const auto& pair : doc) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
        !pair[1].is_number_integer()) {
      throw ParseError("head set entry must be an integer pair [layer, head]", 0);
    }
    const HeadLocation loc{pair[0].get<int>(), pair[1].get<int>()};
    if (loc.layer < 0 || loc.head < 0) throw ParseError("head set entry is negative", 0);
    members.push_back(loc);
  }
  return HeadSet(std::move(members));
}

std::string format_head_set(const HeadSet& heads) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& m : heads) doc.push_back({m.layer, m.head});
  return doc.dump();
}

HeadSet read_head_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open head set file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_head_set(buffer.str());
}

void write_head_set(const std::filesystem::path& path, const HeadSet& heads) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write head set file " + path.string());
  out << format_head_set(heads) << '\n';
}

}  // namespace autopasta
