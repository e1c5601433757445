#include "app.hpp"

#include <autopasta/dataset.hpp>
#include <autopasta/error.hpp>

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace autopasta;
using namespace autopasta::app;
using nlohmann::json;

namespace {

const std::filesystem::path kData(AUTOPASTA_TEST_DATA_DIR);

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("autopasta_cli_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Short contexts keep profiling sweeps cheap.
std::filesystem::path small_dataset(const std::filesystem::path& dir, std::size_t n) {
  std::vector<QAInstance> xs;
  for (std::size_t i = 0; i < n; ++i) {
    QAInstance q;
    q.id = "s" + std::to_string(i);
    q.question = "where is " + std::to_string(i) + "?";
    const std::string a = "Item " + std::to_string(i) + " is in box " + std::to_string(i % 3) + ".";
    const std::string b = "Boxes are red.";
    q.passages.push_back({std::nullopt, std::nullopt, a + " " + b, {{0, a.size()}, {a.size() + 1, a.size() + 1 + b.size()}}});
    q.answers = {"box " + std::to_string(i % 3)};
    xs.push_back(q);
  }
  const auto path = dir / "small.jsonl";
  write_dataset(path, xs);
  return path;
}

RunConfig fixture_config(const std::filesystem::path& out) {
  return resolve_config(std::nullopt, json{{"dataset", (kData / "fixture4.jsonl").string()},
                                           {"output_dir", out.string()},
                                           {"profiling_count", 0},
                                           {"max_new_tokens", 6}});
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AUTOPASTA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return status;
}

}  // namespace

TEST_CASE("config precedence and validation") {
  const auto dir = scratch("config");
  const auto file = dir / "cfg.json";
  std::ofstream(file) << R"({"delta": 2.0, "workers": 3, "dataset": "from_file.jsonl"})";
  const auto c = resolve_config(file, json{{"workers", 5}});
  CHECK(c.delta == 2.0);
  CHECK(c.workers == 5);
  CHECK(c.dataset == "from_file.jsonl");
  CHECK(c.max_new_tokens == RunConfig{}.max_new_tokens);

  std::ofstream(file) << R"({"delat": 2.0})";
  CHECK_THROWS_AS(resolve_config(file, json::object()), ArgumentError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, json{{"delta", -1.0}, {"dataset", "x"}}).validate(), ArgumentError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, json::object()).validate(), ArgumentError);

  RunConfig a = fixture_config(dir);
  RunConfig b = a;
  b.workers = 8;
  b.output_dir = "elsewhere";
  CHECK(a.hash() == b.hash());
  b.delta = 1.0;
  CHECK(a.hash() != b.hash());
  CHECK(RunConfig::from_json(a.to_json()).hash() == a.hash());
}

TEST_CASE("run command writes one record per instance, deterministically") {
  const auto dir = scratch("run");
  RunConfig cfg = fixture_config(dir);
  std::ostringstream log;
  const auto direct = cmd_run(cfg, log);
  CHECK(direct.record.instances.size() == 4);
  CHECK(direct.path == dir / "run_direct.json");
  const json doc = json::parse(slurp(direct.path));
  CHECK(doc["run"]["instances"].size() == 4);
  CHECK(doc["config_hash"] == direct.record.config_hash);
  CHECK(log.str().find("direct: 4 instances") != std::string::npos);

  const std::string first = slurp(direct.path);
  cmd_run(cfg, log);
  CHECK(slurp(direct.path) == first);

  cfg.method = Method::autopasta;
  CHECK_THROWS_AS(cmd_run(cfg, log), ArgumentError);
  std::ofstream(dir / "empty_heads.json") << "[]";
  cfg.head_set = (dir / "empty_heads.json").string();
  const auto ap = cmd_run(cfg, log);
  CHECK(ap.record.em_percent == direct.record.em_percent);
  CHECK(ap.record.f1_percent == direct.record.f1_percent);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ap.record.instances[i].prediction == direct.record.instances[i].prediction);
  }
}

TEST_CASE("profile command budgets") {
  const auto dir = scratch("profile");
  RunConfig cfg = resolve_config(std::nullopt, json{{"dataset", small_dataset(dir, 6).string()},
                                                    {"output_dir", dir.string()},
                                                    {"profiling_count", 3},
                                                    {"max_new_tokens", 4},
                                                    {"strategy", "coarse-to-fine"},
                                                    {"grid_l", {2}},
                                                    {"grid_top_i", json::array()},
                                                    {"grid_top_j", {4}},
                                                    {"workers", 2}});
  std::ostringstream log;
  const auto c2f = cmd_profile(cfg, log);
  REQUIRE(c2f.report.points.size() == 1);
  CHECK(c2f.report.points[0].search.budget.evaluations_used == 12);
  CHECK(c2f.report.points[0].search.budget.evaluations_predicted == 12);
  CHECK(c2f.report.budget.evaluations_used == 13);
  const json report = json::parse(slurp(c2f.report_path));
  CHECK(report["points"][0]["evaluations_used"] == 12);
  CHECK(read_head_set(c2f.head_set_path) == c2f.report.chosen_heads);
  CHECK(c2f.report.chosen_heads.size() == 4);

  const auto again = cmd_profile(cfg, log);
  CHECK(again.report.chosen_heads == c2f.report.chosen_heads);

  cfg.strategy = Strategy::greedy;
  cfg.top_k = 3;
  const auto greedy = cmd_profile(cfg, log);
  CHECK(greedy.report.points[0].search.budget.evaluations_used == 16);
  CHECK(greedy.report.chosen_heads.size() == 3);

  cfg.strategy = Strategy::coarse_to_fine;
  cfg.grid_l = {9};
  CHECK_THROWS_AS(cmd_profile(cfg, log), ArgumentError);
}

TEST_CASE("compare command table shape") {
  const auto dir = scratch("compare");
  RunConfig cfg = fixture_config(dir);
  cfg.head_set = (kData / "heads_in_domain.json").string();
  cfg.head_set_domain = "out-of-domain";
  std::ostringstream log;
  const auto table = cmd_compare(cfg, log);
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].method == Method::direct);
  CHECK(table.rows[1].method == Method::iterative);
  CHECK(table.rows[2].method == Method::autopasta);
  for (const auto& r : table.rows) CHECK(r.average == doctest::Approx((r.em + r.f1) / 2));
  CHECK(table.caption.find("out-of-domain") != std::string::npos);
  CHECK(table.caption.find("heads_in_domain.json") != std::string::npos);
  const json doc = json::parse(slurp(dir / "compare.json"));
  CHECK(doc["rows"].size() == 3);
  const std::string md = slurp(dir / "compare.md");
  CHECK(md.find("| Method |") != std::string::npos);
  CHECK(md.find("| AutoPASTA |") != std::string::npos);
  CHECK(md.find("| Direct Prompting |") != std::string::npos);
}

TEST_CASE("binary exit codes and failed runs leave completed outputs alone") {
  const auto dir = scratch("binary");
  const std::string data = (kData / "fixture4.jsonl").string();
  CHECK(run_cli("run --dataset " + data + " --output " + dir.string() +
                " --profiling-count 0 --max-new-tokens 4") == 0);
  const auto run_file = dir / "run_direct.json";
  REQUIRE(std::filesystem::exists(run_file));
  const std::string before = slurp(run_file);

  CHECK(run_cli("run --dataset " + (dir / "missing.jsonl").string() + " --output " + dir.string()) != 0);
  CHECK(run_cli("run --dataset " + data + " --delta -1 --output " + dir.string()) != 0);
  CHECK(run_cli("frobnicate") != 0);

  // Fails mid-run: the last instance's prompt does not fit a tiny window.
  CHECK(run_cli("run --dataset " + data + " --output " + dir.string() +
                " --profiling-count 0 --max-seq-len 256") != 0);
  CHECK(slurp(run_file) == before);

  std::ofstream(dir / "bad.jsonl") << "{\"id\": 1}\n";
  CHECK(run_cli("run --dataset " + (dir / "bad.jsonl").string() + " --output " + dir.string()) != 0);
  CHECK(slurp(run_file) == before);
}
