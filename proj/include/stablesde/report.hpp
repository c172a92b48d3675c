#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stablesde/stable.hpp"

namespace stablesde {

nlohmann::json bound_report_json(const BoundReport& rep);

struct RunManifest {
  std::string command;
  std::string scenario_path;
  nlohmann::json parameters;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::uint64_t>> input_hashes;
  std::vector<std::string> report_paths;

  nlohmann::json to_json() const;
};

// Resolves the report directory (flag > SDE_REPORT_DIR > ./reports), creates
// it, and writes JSON / CSV files into it.
class ReportWriter {
public:
  explicit ReportWriter(const std::string& dir_flag = "");
  const std::string& dir() const { return dir_; }
  std::string write_json(const std::string& name, const nlohmann::json& j);
  std::string write_text(const std::string& name, const std::string& body);

private:
  std::string dir_;
};

std::uint64_t hash_file(const std::string& path);

}  // namespace stablesde
