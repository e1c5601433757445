#include <autopasta/dataset.hpp>

#include <autopasta/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <random>

namespace autopasta {

using nlohmann::json;

void QAInstance::validate() const {
  if (passages.empty()) throw ArgumentError("instance " + id + " has no passages");
  if (answers.empty()) throw ArgumentError("instance " + id + " has no gold answers");
  std::size_t sentence_count = 0;
  for (const auto& p : passages) {
    std::size_t prev_end = 0;
    for (const auto& s : p.sentences) {
      if (s.begin >= s.end) throw ArgumentError("instance " + id + " has an empty sentence range");
      if (s.end > p.text.size()) {
        throw ArgumentError("instance " + id + " sentence range exceeds its passage");
      }
      if (s.begin < prev_end) {
        throw ArgumentError("instance " + id + " has overlapping or unordered sentence ranges");
      }
      prev_end = s.end;
    }
    sentence_count += p.sentences.size();
  }
  if (sentence_count == 0) throw ArgumentError("instance " + id + " has no sentences");
}

std::vector<std::optional<std::string>> QAInstance::hops() const {
  std::vector<std::optional<std::string>> out;
  for (const auto& p : passages) {
    if (p.hop_id && std::find(out.begin(), out.end(), p.hop_id) == out.end()) {
      out.push_back(p.hop_id);
    }
  }
  if (out.empty()) out.push_back(std::nullopt);
  return out;
}

Context build_context(const QAInstance& instance, const std::optional<std::string>& hop) {
  Context ctx;
  const bool numbered = instance.passages.size() > 1;
  std::size_t sentence_index = 0;
  bool first = true;
  for (std::size_t k = 0; k < instance.passages.size(); ++k) {
    const Passage& p = instance.passages[k];
    const bool included = !hop || p.hop_id == hop;
    if (!included) {
      sentence_index += p.sentences.size();
      continue;
    }
    if (!first) ctx.text += '\n';
    first = false;
    if (numbered) {
      ctx.text += "[" + std::to_string(k + 1) + "]: ";
      if (p.title) ctx.text += *p.title + " - ";
    }
    const std::size_t base = ctx.text.size();
    ctx.text += p.text;
    for (const auto& s : p.sentences) {
      ctx.sentences.push_back({p.text.substr(s.begin, s.size()), sentence_index++, base + s.begin,
                               base + s.end, p.hop_id});
    }
  }
  return ctx;
}

namespace {

std::optional<std::string> optional_label(const json& rec, const char* key, std::size_t line_no) {
  if (!rec.contains(key) || rec[key].is_null()) return std::nullopt;
  if (rec[key].is_string()) return rec[key].get<std::string>();
  if (rec[key].is_number_integer()) return std::to_string(rec[key].get<long long>());
  throw ParseError(std::string("field \"") + key + "\" must be a string or integer", line_no);
}

const json& required(const json& rec, const char* key, std::size_t line_no) {
  if (!rec.is_object() || !rec.contains(key)) {
    throw ParseError(std::string("missing field \"") + key + "\"", line_no);
  }
  return rec[key];
}

std::string required_string(const json& rec, const char* key, std::size_t line_no) {
  const json& v = required(rec, key, line_no);
  if (!v.is_string()) throw ParseError(std::string("field \"") + key + "\" must be a string", line_no);
  return v.get<std::string>();
}

}  // namespace

QAInstance parse_instance(const std::string& json_line, std::size_t line_no) {
  json rec;
  try {
    rec = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), line_no);
  }
  if (!rec.is_object()) throw ParseError("record must be a JSON object", line_no);

  QAInstance inst;
  const json& id = required(rec, "id", line_no);
  if (id.is_string()) inst.id = id.get<std::string>();
  else if (id.is_number_integer()) inst.id = std::to_string(id.get<long long>());
  else throw ParseError("field \"id\" must be a string or integer", line_no);
  inst.question = required_string(rec, "question", line_no);

  const json& passages = required(rec, "passages", line_no);
  if (!passages.is_array()) throw ParseError("field \"passages\" must be an array", line_no);
  for (const auto& pj : passages) {
    Passage p;
    p.text = required_string(pj, "text", line_no);
    p.title = optional_label(pj, "title", line_no);
    p.hop_id = optional_label(pj, "hop_id", line_no);
    const json& sentences = required(pj, "sentences", line_no);
    if (!sentences.is_array()) throw ParseError("field \"sentences\" must be an array", line_no);
    for (const auto& sj : sentences) {
      const json& start = required(sj, "start", line_no);
      const json& end = required(sj, "end", line_no);
      if (!start.is_number_unsigned() || !end.is_number_unsigned()) {
        throw ParseError("sentence offsets must be non-negative integers", line_no);
      }
      const CharRange range{start.get<std::size_t>(), end.get<std::size_t>()};
      if (range.end > p.text.size() || range.begin >= range.end) {
        throw ParseError("sentence offsets [" + std::to_string(range.begin) + ", " +
                             std::to_string(range.end) + ") invalid for passage of length " +
                             std::to_string(p.text.size()),
                         line_no);
      }
      if (sj.contains("text")) {
        if (!sj["text"].is_string() ||
            sj["text"].get<std::string>() != p.text.substr(range.begin, range.size())) {
          throw ParseError("sentence text does not match the passage at its offsets", line_no);
        }
      }
      p.sentences.push_back(range);
    }
    inst.passages.push_back(std::move(p));
  }

  const json& answers = required(rec, "answers", line_no);
  if (!answers.is_array()) throw ParseError("field \"answers\" must be an array", line_no);
  for (const auto& a : answers) {
    if (!a.is_string()) throw ParseError("answers must be strings", line_no);
    inst.answers.push_back(a.get<std::string>());
  }

  try {
    inst.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(e.what(), line_no);
  }
  return inst;
}

std::string format_instance(const QAInstance& instance) {
  json rec;
  rec["id"] = instance.id;
  rec["question"] = instance.question;
  rec["passages"] = json::array();
  for (const auto& p : instance.passages) {
    json pj;
    if (p.title) pj["title"] = *p.title;
    if (p.hop_id) pj["hop_id"] = *p.hop_id;
    pj["text"] = p.text;
    pj["sentences"] = json::array();
    for (const auto& s : p.sentences) {
      pj["sentences"].push_back(
          {{"start", s.begin}, {"end", s.end}, {"text", p.text.substr(s.begin, s.size())}});
    }
    rec["passages"].push_back(std::move(pj));
  }
  rec["answers"] = instance.answers;
  return rec.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::vector<QAInstance> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset " + path.string());
  std::vector<QAInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_instance(line, line_no));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const QAInstance> instances) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write dataset " + path.string());
  for (const auto& inst : instances) out << format_instance(inst) << '\n';
}

std::vector<std::size_t> split_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates with rejection sampling: std::shuffle's algorithm is
  // implementation-defined, so splits would differ across standard libraries.
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = rng.max() - (rng.max() % bound);
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(order[i - 1], order[static_cast<std::size_t>(r % bound)]);
  }
  return order;
}

DatasetSplit split_dataset(std::span<const QAInstance> instances, std::size_t profiling_count,
                           std::uint64_t seed) {
  if (profiling_count > instances.size()) {
    throw ArgumentError("profiling split of " + std::to_string(profiling_count) +
                        " exceeds dataset size " + std::to_string(instances.size()));
  }
  DatasetSplit out;
  out.seed = seed;
  const auto order = split_permutation(instances.size(), seed);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < profiling_count ? out.profiling : out.test).push_back(instances[order[i]]);
  }
  return out;
}

}  // namespace autopasta
