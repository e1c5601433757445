#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace autopasta {

enum class Method { direct, iterative, autopasta };

std::string to_string(Method m);
/// Throws ArgumentError for an unknown name.
Method parse_method(std::string_view name);

struct InstanceScore {
  std::string id;
  std::string prediction;
  double em = 0.0;
  double f1 = 0.0;
};

struct RunRecord {
  Method method = Method::direct;
  std::string config_hash;
  std::vector<InstanceScore> instances;
  double em_percent = 0.0;
  double f1_percent = 0.0;
};

/// Aggregates are per-instance means times 100 (0 for an empty run).
RunRecord aggregate_run(Method method, std::vector<InstanceScore> instances,
                        std::string config_hash = {});

nlohmann::json to_json(const RunRecord& run);
RunRecord run_from_json(const nlohmann::json& doc);

/// FNV-1a 64-bit hash, hex encoded.
std::string stable_hash(std::string_view bytes);

/// Writes through a temporary sibling and renames into place, so a failed
/// write never clobbers an existing file.
void write_file_atomically(const std::filesystem::path& path, std::string_view contents);

/// JSON text with invalid UTF-8 replaced, since toy generations are raw bytes.
std::string dump_json(const nlohmann::json& doc, int indent = 2);

}  // namespace autopasta
