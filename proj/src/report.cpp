#include "stablesde/report.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stablesde/errors.hpp"
#include "stablesde/scenario.hpp"

namespace stablesde {

nlohmann::json bound_report_json(const BoundReport& rep) {
  nlohmann::json j;
  j["bound_id"] = rep.bound_id;
  j["max_ratio"] = rep.max_ratio;
  j["argmax"] = {rep.argmax_t, rep.argmax_x};
  j["samples"] = rep.samples;
  return j;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["scenario"] = scenario_path;
  j["parameters"] = parameters;
  j["seed"] = seed;
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [name, h] : input_hashes) {
    std::ostringstream os;
    os << std::hex << h;
    hashes[name] = os.str();
  }
  j["input_hashes"] = hashes;
  j["reports"] = report_paths;
  return j;
}

ReportWriter::ReportWriter(const std::string& dir_flag) {
  if (!dir_flag.empty()) {
    dir_ = dir_flag;
  } else if (const char* env = std::getenv("SDE_REPORT_DIR")) {
    dir_ = env;
  } else {
    dir_ = "reports";
  }
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw NumericalError("cannot create report directory " + dir_);
}

std::string ReportWriter::write_json(const std::string& name,
                                     const nlohmann::json& j) {
  const std::string path = dir_ + "/" + name;
  std::ofstream out(path);
  if (!out) throw NumericalError("cannot write report " + path);
  out << j.dump(2) << "\n";
  return path;
}

std::string ReportWriter::write_text(const std::string& name,
                                     const std::string& body) {
  const std::string path = dir_ + "/" + name;
  std::ofstream out(path);
  if (!out) throw NumericalError("cannot write report " + path);
  out << body;
  return path;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  return fnv1a(s.data(), s.size());
}

}  // namespace stablesde
