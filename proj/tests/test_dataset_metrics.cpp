#include <autopasta/dataset.hpp>
#include <autopasta/error.hpp>
#include <autopasta/metrics.hpp>
#include <autopasta/run_record.hpp>

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace autopasta;

namespace {

QAInstance synthetic(std::size_t i) {
  QAInstance q;
  q.id = "syn-" + std::to_string(i);
  q.question = "what is item " + std::to_string(i) + "?";
  const std::string a = "Item " + std::to_string(i) + " is a thing.";
  const std::string b = "It is blue.";
  q.passages.push_back({std::nullopt, std::nullopt, a + " " + b, {{0, a.size()}, {a.size() + 1, a.size() + 1 + b.size()}}});
  q.answers = {"a thing"};
  return q;
}

std::vector<QAInstance> synthetic_set(std::size_t n) {
  std::vector<QAInstance> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic(i));
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("autopasta_" + name);
}

}  // namespace

TEST_CASE("fixture dataset loads") {
  const auto data = load_dataset(std::filesystem::path(AUTOPASTA_TEST_DATA_DIR) / "fixture16.jsonl");
  CHECK(data.size() == 16);
  for (const auto& q : data) CHECK_NOTHROW(q.validate());
  CHECK(data[0].id == "nq-0");
  CHECK(data[0].hops().size() == 1);
  CHECK_FALSE(data[0].hops()[0].has_value());
  CHECK(data[1].hops().size() == 2);
}

TEST_CASE("dataset write and load round trip at full scale") {
  const auto path = temp_file("large.jsonl");
  const auto data = synthetic_set(7189);
  write_dataset(path, data);
  const auto back = load_dataset(path);
  CHECK(back.size() == 7189);
  CHECK(back == data);
  std::filesystem::remove(path);
}

TEST_CASE("invalid records are rejected with their line number") {
  QAInstance q = synthetic(0);
  q.passages[0].sentences[1].begin = 3;
  CHECK_THROWS_AS(q.validate(), ArgumentError);
  q = synthetic(0);
  q.answers.clear();
  CHECK_THROWS_AS(q.validate(), ArgumentError);
  q = synthetic(0);
  q.passages.clear();
  CHECK_THROWS_AS(q.validate(), ArgumentError);
  q = synthetic(0);
  q.passages[0].sentences[1].end = 1000;
  CHECK_THROWS_AS(q.validate(), ArgumentError);

  const auto path = temp_file("bad.jsonl");
  {
    std::ofstream out(path);
    out << format_instance(synthetic(0)) << '\n';
    out << format_instance(synthetic(1)) << '\n';
    QAInstance bad = synthetic(2);
    bad.answers.clear();
    out << format_instance(bad) << '\n';
  }
  try {
    load_dataset(path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).starts_with("line 3:"));
  }
  {
    std::ofstream out(path);
    out << format_instance(synthetic(0)) << "\n{not json\n";
  }
  CHECK_THROWS_AS(load_dataset(path), ParseError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset(path), LoadError);
}

TEST_CASE("optional sentence text is cross-checked") {
  const std::string ok =
      R"({"id": 5, "question": "q", "answers": ["x"], "passages": [{"text": "Ab. Cd.", "sentences": [{"start": 0, "end": 3, "text": "Ab."}, {"start": 4, "end": 7}]}]})";
  const auto q = parse_instance(ok, 1);
  CHECK(q.id == "5");
  const std::string bad =
      R"({"id": "z", "question": "q", "answers": ["x"], "passages": [{"text": "Ab. Cd.", "sentences": [{"start": 0, "end": 3, "text": "Xy."}]}]})";
  CHECK_THROWS_AS(parse_instance(bad, 4), ParseError);
}

TEST_CASE("profiling and test split sizes") {
  const auto nq = synthetic_set(7189);
  const auto s = split_dataset(nq, 1000, 42);
  CHECK(s.profiling.size() == 1000);
  CHECK(s.test.size() == 6189);
  const auto hp = split_dataset(synthetic_set(5190), 1000, 42);
  CHECK(hp.profiling.size() == 1000);
  CHECK(hp.test.size() == 4190);

  const auto again = split_dataset(nq, 1000, 42);
  CHECK(again.profiling == s.profiling);
  CHECK(again.test == s.test);
  const auto other = split_dataset(nq, 1000, 43);
  CHECK_FALSE(other.profiling == s.profiling);

  std::set<std::string> ids;
  for (const auto& q : s.profiling) ids.insert(q.id);
  for (const auto& q : s.test) CHECK(ids.insert(q.id).second);
  CHECK(ids.size() == 7189);

  auto perm = split_permutation(100, 9);
  std::sort(perm.begin(), perm.end());
  std::vector<std::size_t> expect(100);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(perm == expect);

  CHECK_THROWS_AS(split_dataset(synthetic_set(10), 11, 1), ArgumentError);
  const auto none = split_dataset(synthetic_set(10), 0, 1);
  CHECK(none.profiling.empty());
  CHECK(none.test.size() == 10);
}

TEST_CASE("answer normalization") {
  CHECK(normalize_answer("July 2, 1776.") == "july 2 1776");
  CHECK(normalize_answer("The Authority") == "authority");
  CHECK(normalize_answer("") == "");
  CHECK(normalize_answer("  An   apple a day, the end ") == "apple day end");
  CHECK(normalize_answer("theory") == "theory");

  std::mt19937_64 rng(5);
  const std::string alphabet = "abcdeThe ANa.,!?'-  xyz";
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const std::size_t len = rng() % 24;
    for (std::size_t k = 0; k < len; ++k) s.push_back(alphabet[rng() % alphabet.size()]);
    CHECK(normalize_answer(s) == oracle::normalize(s));
  }
}

TEST_CASE("exact match and token F1 anchors") {
  const std::vector<std::string> july = {"July 2, 1776."};
  CHECK(exact_match("July 2, 1776.", july) == 1.0);
  CHECK(exact_match("July 4, 1776", july) == 0.0);
  const std::vector<std::string> miles = {"110 miles"};
  CHECK(token_f1("110 miles", miles) == 1.0);
  CHECK(token_f1("Long Island Sound", miles) == 0.0);
  const std::vector<std::string> plain = {"july 2 1776"};
  CHECK(token_f1("on july 2 1776", plain) == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(token_f1_single("", "") == 1.0);
  CHECK(token_f1_single("x", "") == 0.0);
  CHECK(token_f1_single("", "x") == 0.0);
  const std::vector<std::string> two = {"nothing here", "the Eiffel Tower"};
  CHECK(exact_match("eiffel tower", two) == 1.0);
  CHECK(token_f1("eiffel", two) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("metrics agree with the reference and respect EM <= F1") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    const std::string pred = oracle::random_sentence(rng, 0, 5);
    std::vector<std::string> golds;
    const std::size_t n = 1 + rng() % 3;
    for (std::size_t k = 0; k < n; ++k) golds.push_back(oracle::random_sentence(rng, 1, 4));
    if (rng() % 4 == 0) golds.push_back("The " + pred);
    const double em = exact_match(pred, golds);
    const double f1 = token_f1(pred, golds);
    CHECK(em == oracle::em(pred, golds));
    CHECK(f1 == doctest::Approx(oracle::f1(pred, golds)).epsilon(1e-12));
    CHECK(f1 >= em);
    CHECK(exact_match(pred, std::vector<std::string>{pred}) == 1.0);
  }
}

TEST_CASE("run aggregation") {
  std::vector<InstanceScore> xs;
  const double ems[] = {1, 0, 0, 1};
  const double f1s[] = {1, 0.5, 0.25, 1};
  for (int i = 0; i < 4; ++i) xs.push_back({"i" + std::to_string(i), "p", ems[i], f1s[i]});
  const auto run = aggregate_run(Method::autopasta, xs, "abc");
  CHECK(run.em_percent == doctest::Approx(50.0));
  CHECK(run.f1_percent == doctest::Approx((1 + 0.5 + 0.25 + 1) / 4 * 100));
  CHECK(aggregate_run(Method::direct, {}).em_percent == 0.0);

  std::vector<InstanceScore> all;
  for (int i = 0; i < 3; ++i) all.push_back({"i", "p", 1, 1});
  CHECK(aggregate_run(Method::direct, all).em_percent == 100.0);

  const auto back = run_from_json(to_json(run));
  CHECK(back.method == Method::autopasta);
  CHECK(back.config_hash == "abc");
  CHECK(back.instances.size() == 4);
  CHECK(back.em_percent == run.em_percent);
  CHECK(to_string(parse_method("iterative")) == "iterative");
  CHECK_THROWS_AS(parse_method("pasta"), ArgumentError);
}

TEST_CASE("atomic writes and hashing") {
  const auto path = temp_file("atomic.txt");
  write_file_atomically(path, "first");
  write_file_atomically(path, "second");
  std::ifstream in(path);
  std::string s;
  std::getline(in, s);
  CHECK(s == "second");
  CHECK_FALSE(std::filesystem::exists(path.string() + ".partial"));
  std::filesystem::remove(path);
  CHECK(stable_hash("abc") == stable_hash("abc"));
  CHECK(stable_hash("abc") != stable_hash("abd"));
  CHECK(stable_hash("").size() == 16);
  CHECK_NOTHROW(dump_json(nlohmann::json(std::string("\xff\xfe"))));
}
