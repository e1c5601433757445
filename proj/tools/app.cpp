#include "app.hpp"

#include <autopasta/dataset.hpp>
#include <autopasta/error.hpp>
#include <autopasta/metrics.hpp>
#include <autopasta/parallel.hpp>
#include <autopasta/pipeline.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace autopasta::app {

using nlohmann::json;

namespace {

template <typename T>
void read_key(const json& doc, const char* key, T& out) {
  if (!doc.contains(key) || doc[key].is_null()) return;
  try {
    out = doc[key].get<T>();
  } catch (const json::exception&) {
    throw ArgumentError(std::string("config key \"") + key + "\" has the wrong type");
  }
}

json hashed_view(const RunConfig& config) {
  json doc = config.to_json();
  doc.erase("workers");
  doc.erase("output_dir");
  doc.erase("snapshots");
  return doc;
}

std::string grid_string(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string format_percent(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

}  // namespace

json RunConfig::to_json() const {
  json doc;
  doc["checkpoint"] = checkpoint;
  doc["model_seed"] = model_seed;
  doc["layers"] = model.num_layers;
  doc["heads"] = model.num_heads;
  doc["model_dim"] = model.model_dim;
  doc["vocab_size"] = model.vocab_size;
  doc["max_sequence_length"] = model.max_sequence_length;
  doc["ffn_dim"] = model.ffn_dim;
  doc["dataset"] = dataset;
  doc["method"] = to_string(method);
  doc["head_set"] = head_set;
  doc["head_set_domain"] = head_set_domain;
  doc["delta"] = delta;
  doc["max_new_tokens"] = max_new_tokens;
  doc["identification_margin"] = identification_margin;
  doc["hop_restricted_identification"] = hop_restricted_identification;
  doc["embedding"] = embedding;
  doc["embedding_file"] = embedding_file;
  doc["embedding_dim"] = embedding_dim;
  doc["template_dir"] = template_dir;
  doc["output_dir"] = output_dir;
  doc["workers"] = workers;
  doc["profiling_count"] = profiling_count;
  doc["split_seed"] = split_seed;
  doc["strategy"] = to_string(strategy);
  doc["grid_l"] = grid_l;
  doc["grid_top_i"] = grid_top_i;
  doc["grid_top_j"] = grid_top_j;
  doc["top_k"] = top_k;
  doc["group_size"] = group_size;
  doc["k_groups"] = k_groups;
  doc["max_profile_instances"] = max_profile_instances;
  doc["snapshots"] = snapshots;
  return doc;
}

RunConfig RunConfig::from_json(const json& doc, RunConfig base) {
  if (!doc.is_object()) throw ArgumentError("config must be a JSON object");
  static const std::vector<std::string> known = [] {
    std::vector<std::string> keys;
    const json defaults = RunConfig{}.to_json();
    for (const auto& [k, v] : defaults.items()) keys.push_back(k);
    return keys;
  }();
  for (const auto& [k, v] : doc.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ArgumentError("unknown config key \"" + k + "\"");
    }
  }
  RunConfig c = std::move(base);
  read_key(doc, "checkpoint", c.checkpoint);
  read_key(doc, "model_seed", c.model_seed);
  read_key(doc, "layers", c.model.num_layers);
  read_key(doc, "heads", c.model.num_heads);
  read_key(doc, "model_dim", c.model.model_dim);
  read_key(doc, "vocab_size", c.model.vocab_size);
  read_key(doc, "max_sequence_length", c.model.max_sequence_length);
  read_key(doc, "ffn_dim", c.model.ffn_dim);
  read_key(doc, "dataset", c.dataset);
  if (doc.contains("method")) {
    std::string m;
    read_key(doc, "method", m);
    c.method = parse_method(m);
  }
  read_key(doc, "head_set", c.head_set);
  read_key(doc, "head_set_domain", c.head_set_domain);
  read_key(doc, "delta", c.delta);
  read_key(doc, "max_new_tokens", c.max_new_tokens);
  read_key(doc, "identification_margin", c.identification_margin);
  read_key(doc, "hop_restricted_identification", c.hop_restricted_identification);
  read_key(doc, "embedding", c.embedding);
  read_key(doc, "embedding_file", c.embedding_file);
  read_key(doc, "embedding_dim", c.embedding_dim);
  read_key(doc, "template_dir", c.template_dir);
  read_key(doc, "output_dir", c.output_dir);
  read_key(doc, "workers", c.workers);
  read_key(doc, "profiling_count", c.profiling_count);
  read_key(doc, "split_seed", c.split_seed);
  if (doc.contains("strategy")) {
    std::string s;
    read_key(doc, "strategy", s);
    c.strategy = parse_strategy(s);
  }
  read_key(doc, "grid_l", c.grid_l);
  read_key(doc, "grid_top_i", c.grid_top_i);
  read_key(doc, "grid_top_j", c.grid_top_j);
  read_key(doc, "top_k", c.top_k);
  read_key(doc, "group_size", c.group_size);
  read_key(doc, "k_groups", c.k_groups);
  read_key(doc, "max_profile_instances", c.max_profile_instances);
  read_key(doc, "snapshots", c.snapshots);
  return c;
}

RunConfig RunConfig::from_json(const json& doc) { return from_json(doc, RunConfig{}); }

void RunConfig::validate() const {
  if (dataset.empty()) throw ArgumentError("no dataset given");
  if (!(delta > 0.0)) throw ArgumentError("delta must be positive");
  if (max_new_tokens < 1) throw ArgumentError("max_new_tokens must be at least 1");
  if (identification_margin < 0) throw ArgumentError("identification_margin must be >= 0");
  if (workers < 1) throw ArgumentError("workers must be at least 1");
  if (embedding != "hashed" && embedding != "file") {
    throw ArgumentError("embedding must be \"hashed\" or \"file\"");
  }
  if (embedding == "file" && embedding_file.empty()) {
    throw ArgumentError("embedding \"file\" needs embedding_file");
  }
  if (embedding_dim < 1) throw ArgumentError("embedding_dim must be positive");
  if (checkpoint.empty()) model.validate();
}

std::string RunConfig::hash() const { return stable_hash(hashed_view(*this).dump()); }

RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file,
                         const json& overrides) {
  RunConfig config;
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw LoadError("cannot open config file " + config_file->string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("config file: ") + e.what(), 0);
    }
    config = RunConfig::from_json(doc, config);
  }
  return RunConfig::from_json(overrides, config);
}

Environment prepare(const RunConfig& config) {
  config.validate();
  Environment env;
  env.model = std::make_unique<Model>(config.checkpoint.empty()
                                          ? Model::init_random(config.model, config.model_seed)
                                          : Model::load_checkpoint(config.checkpoint));
  if (config.embedding == "file") {
    env.provider = std::make_unique<ExternalEmbeddings>(
        ExternalEmbeddings::load(config.embedding_file));
  } else {
    env.provider =
        std::make_unique<HashedBagOfTokens>(static_cast<std::size_t>(config.embedding_dim));
  }
  env.templates = config.template_dir.empty() ? PromptTemplates::defaults()
                                              : PromptTemplates::load_dir(config.template_dir);
  const auto instances = load_dataset(config.dataset);
  env.split = split_dataset(instances, config.profiling_count, config.split_seed);
  return env;
}

HeadSet resolve_head_set(const RunConfig& config) {
  if (!config.head_set.empty()) return read_head_set(config.head_set);
  const auto fallback = std::filesystem::path(config.output_dir) / "head_set.json";
  if (std::filesystem::exists(fallback)) return read_head_set(fallback);
  throw ArgumentError("method autopasta needs --head-set or a prior profile run in " +
                      config.output_dir);
}

RunRecord run_method(const RunConfig& config, const Environment& env, Method method,
                     std::span<const QAInstance> instances, const HeadSet& head_set,
                     json* snapshots) {
  PipelineOptions options;
  options.answer_params.max_new_tokens = config.max_new_tokens;
  options.identification_margin = config.identification_margin;
  options.hop_restricted_identification = config.hop_restricted_identification;
  options.templates = &env.templates;
  const bool capture = snapshots != nullptr && method == Method::autopasta && !head_set.empty();
  if (capture) {
    options.answer_params.capture_attention = true;
    options.answer_params.capture_heads = head_set;
  }

  std::vector<InstanceScore> scores(instances.size());
  std::vector<json> snaps(instances.size());
  parallel_for(instances.size(), config.workers, [&](std::size_t i) {
    const QAInstance& inst = instances[i];
    PipelineResult r;
    switch (method) {
      case Method::direct:
        r = direct_answer(*env.model, inst, options);
        break;
      case Method::iterative:
        r = iterative_answer(*env.model, inst, *env.provider, options);
        break;
      case Method::autopasta:
        r = autopasta_answer(*env.model, inst, head_set, config.delta, *env.provider, options);
        break;
    }
    scores[i] = {inst.id, r.answer, exact_match(r.answer, inst.answers),
                 token_f1(r.answer, inst.answers)};
    if (capture) {
      json heads = json::array();
      for (const auto& snap : r.snapshots) {
        if (snap.step != 0) continue;
        const auto last = snap.weights.row(snap.weights.rows() - 1);
        double mass = 0.0;
        for (std::size_t j : r.highlight) mass += last[j];
        heads.push_back({{"layer", snap.head.layer},
                         {"head", snap.head.head},
                         {"last_row_mass_on_highlight", mass}});
      }
      snaps[i] = {{"id", inst.id},
                  {"highlight_tokens", r.highlight.size()},
                  {"steering_applied", r.steering_applied},
                  {"heads", heads}};
    }
  });
  if (capture) *snapshots = json(snaps);

  std::string hash_input = hashed_view(config).dump() + "|" + to_string(method);
  if (method == Method::autopasta) hash_input += "|" + format_head_set(head_set);
  return aggregate_run(method, std::move(scores), stable_hash(hash_input));
}

RunOutcome cmd_run(const RunConfig& config, std::ostream& log) {
  const Environment env = prepare(config);
  const HeadSet heads = config.method == Method::autopasta ? resolve_head_set(config) : HeadSet{};
  json snapshots;
  RunOutcome out;
  out.record = run_method(config, env, config.method, env.split.test, heads,
                          config.snapshots ? &snapshots : nullptr);

  std::filesystem::create_directories(config.output_dir);
  out.path = std::filesystem::path(config.output_dir) / ("run_" + to_string(config.method) + ".json");
  json doc;
  doc["config"] = config.to_json();
  doc["head_set"] = json::parse(format_head_set(heads));
  doc["run"] = to_json(out.record);
  doc["config_hash"] = out.record.config_hash;
  write_file_atomically(out.path, dump_json(doc) + "\n");
  if (config.snapshots) {
    write_file_atomically(
        std::filesystem::path(config.output_dir) / ("snapshots_" + to_string(config.method) + ".json"),
        dump_json(snapshots) + "\n");
  }
  log << to_string(config.method) << ": " << out.record.instances.size()
      << " instances, EM " << format_percent(out.record.em_percent) << ", token-F1 "
      << format_percent(out.record.f1_percent) << "\n";
  return out;
}

ProfileOutcome cmd_profile(const RunConfig& config, std::ostream& log) {
  const Environment env = prepare(config);
  std::vector<QAInstance> instances = env.split.profiling;
  if (config.max_profile_instances > 0 && instances.size() > config.max_profile_instances) {
    instances.resize(config.max_profile_instances);
  }
  PipelineOptions options;
  options.answer_params.max_new_tokens = config.max_new_tokens;
  options.identification_margin = config.identification_margin;
  options.hop_restricted_identification = config.hop_restricted_identification;
  options.templates = &env.templates;

  const ModelShape shape{env.model->config().num_layers, env.model->config().num_heads};
  std::vector<GridPoint> grid;
  switch (config.strategy) {
    case Strategy::greedy:
      grid.push_back({Strategy::greedy, config.top_k, config.group_size, 0, TopFromPool{0}});
      break;
    case Strategy::group:
      grid.push_back({Strategy::group, config.k_groups, config.group_size, 0, TopFromPool{0}});
      break;
    case Strategy::coarse_to_fine:
      grid = coarse_to_fine_grid(shape, config.grid_l, config.grid_top_i, config.grid_top_j);
      break;
  }
  if (grid.empty()) {
    throw ArgumentError("no valid grid point for a model with " +
                        std::to_string(shape.num_layers) + " layers and " +
                        std::to_string(shape.num_heads) + " heads (l in {" +
                        grid_string(config.grid_l) + "})");
  }

  const InstanceEvaluator evaluator(*env.model, instances, *env.provider, config.delta, options,
                                    config.workers);
  ProfileOutcome out;
  out.report = profile(shape, grid, evaluator, config.workers);

  std::filesystem::create_directories(config.output_dir);
  out.report_path = std::filesystem::path(config.output_dir) / "profile_report.json";
  out.head_set_path = std::filesystem::path(config.output_dir) / "head_set.json";
  json doc = to_json(out.report, shape);
  doc["config"] = config.to_json();
  doc["config_hash"] = config.hash();
  doc["profiling_instances"] = instances.size();
  write_file_atomically(out.report_path, dump_json(doc) + "\n");
  write_file_atomically(out.head_set_path, format_head_set(out.report.chosen_heads) + "\n");

  log << to_string(config.strategy) << ": " << out.report.points.size() << " grid point(s), "
      << out.report.budget.evaluations_used << " evaluations (predicted "
      << out.report.budget.evaluations_predicted << ")\n";
  log << "chosen: " << out.report.chosen_score.label << ", "
      << out.report.chosen_heads.size() << " heads, token-F1 "
      << format_percent(out.report.chosen_score.token_f1) << "\n";
  return out;
}

json ComparisonTable::to_json() const {
  json doc;
  doc["caption"] = caption;
  doc["rows"] = json::array();
  for (const auto& r : rows) {
    doc["rows"].push_back(
        {{"method", to_string(r.method)}, {"em", r.em}, {"token_f1", r.f1}, {"average", r.average}});
  }
  doc["runs"] = json::array();
  for (const auto& run : runs) doc["runs"].push_back(autopasta::to_json(run));
  return doc;
}

std::string ComparisonTable::to_markdown() const {
  std::ostringstream out;
  out << caption << "\n\n";
  out << "| Method | EM | Token-F1 | Average |\n";
  out << "|---|---|---|---|\n";
  for (const auto& r : rows) {
    static const char* names[] = {"Direct Prompting", "Iterative Prompting", "AutoPASTA"};
    out << "| " << names[static_cast<int>(r.method)] << " | " << format_percent(r.em) << " | "
        << format_percent(r.f1) << " | " << format_percent(r.average) << " |\n";
  }
  return out.str();
}

ComparisonTable cmd_compare(const RunConfig& config, std::ostream& log) {
  const Environment env = prepare(config);
  const HeadSet heads = resolve_head_set(config);
  ComparisonTable table;
  const std::string head_source = config.head_set.empty()
                                      ? (std::filesystem::path(config.output_dir) / "head_set.json").string()
                                      : config.head_set;
  table.caption = "Dataset " + std::filesystem::path(config.dataset).filename().string() + ", " +
                  std::to_string(env.split.test.size()) + " test instances; head set " +
                  head_source + " (" + config.head_set_domain + ", " +
                  std::to_string(heads.size()) + " heads)";
  for (Method m : {Method::direct, Method::iterative, Method::autopasta}) {
    RunRecord run = run_method(config, env, m, env.split.test, heads);
    table.rows.push_back({m, run.em_percent, run.f1_percent, (run.em_percent + run.f1_percent) / 2.0});
    log << to_string(m) << ": EM " << format_percent(run.em_percent) << ", token-F1 "
        << format_percent(run.f1_percent) << "\n";
    table.runs.push_back(std::move(run));
  }
  std::filesystem::create_directories(config.output_dir);
  json doc = table.to_json();
  doc["config"] = config.to_json();
  doc["config_hash"] = config.hash();
  write_file_atomically(std::filesystem::path(config.output_dir) / "compare.json",
                        dump_json(doc) + "\n");
  write_file_atomically(std::filesystem::path(config.output_dir) / "compare.md",
                        table.to_markdown());
  return table;
}

}  // namespace autopasta::app
