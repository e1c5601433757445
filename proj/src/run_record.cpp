#include <autopasta/run_record.hpp>

#include <autopasta/error.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>

namespace autopasta {

std::string to_string(Method m) {
  switch (m) {
    case Method::direct:
      return "direct";
    case Method::iterative:
      return "iterative";
    case Method::autopasta:
      return "autopasta";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "direct") return Method::direct;
  if (name == "iterative") return Method::iterative;
  if (name == "autopasta") return Method::autopasta;
  throw ArgumentError("unknown method \"" + std::string(name) +
                      "\" (expected direct, iterative or autopasta)");
}

RunRecord aggregate_run(Method method, std::vector<InstanceScore> instances,
                        std::string config_hash) {
  RunRecord run;
  run.method = method;
  run.config_hash = std::move(config_hash);
  run.instances = std::move(instances);
  if (!run.instances.empty()) {
    double em = 0.0, f1 = 0.0;
    for (const auto& s : run.instances) {
      em += s.em;
      f1 += s.f1;
    }
    const auto n = static_cast<double>(run.instances.size());
    run.em_percent = 100.0 * em / n;
    run.f1_percent = 100.0 * f1 / n;
  }
  return run;
}

nlohmann::json to_json(const RunRecord& run) {
  nlohmann::json doc;
  doc["method"] = to_string(run.method);
  doc["config_hash"] = run.config_hash;
  doc["count"] = run.instances.size();
  doc["em"] = run.em_percent;
  doc["token_f1"] = run.f1_percent;
  doc["instances"] = nlohmann::json::array();
  for (const auto& s : run.instances) {
    doc["instances"].push_back(
        {{"id", s.id}, {"prediction", s.prediction}, {"em", s.em}, {"f1", s.f1}});
  }
  return doc;
}

RunRecord run_from_json(const nlohmann::json& doc) {
  try {
    RunRecord run;
    run.method = parse_method(doc.at("method").get<std::string>());
    run.config_hash = doc.at("config_hash").get<std::string>();
    run.em_percent = doc.at("em").get<double>();
    run.f1_percent = doc.at("token_f1").get<double>();
    for (const auto& s : doc.at("instances")) {
      run.instances.push_back({s.at("id").get<std::string>(), s.at("prediction").get<std::string>(),
                               s.at("em").get<double>(), s.at("f1").get<double>()});
    }
    return run;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run file: ") + e.what(), 0);
  }
}

std::string stable_hash(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char ch : bytes) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

void write_file_atomically(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw LoadError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string dump_json(const nlohmann::json& doc, int indent) {
  return doc.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace autopasta
