// Exercises the command-line surface end to end: exit codes, report files,
// and the determinism contract of repeated runs.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    std::printf("FAIL %s\n", what.c_str());
    ++failures;
  } else {
    std::printf("PASS %s\n", what.c_str());
  }
}

int run(const std::string& args, const std::string& rep_dir) {
  const std::string cmd = "SDE_REPORT_DIR=" + rep_dir + " " + CLI_BIN + " " +
                          args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace

int main() {
  const std::string scen = std::string(SCENARIO_DIR);
  const std::string tmp = "/tmp/sde_cli_reports";
  std::system(("rm -rf " + tmp + " && mkdir -p " + tmp).c_str());

  expect(run("suite --scenario " + scen + "/constant.json --quick",
             tmp + "/s1") == 0,
         "suite on the constant scenario exits 0");
  expect(run("suite --scenario /nonexistent.json", tmp + "/s2") == 2,
         "missing scenario exits 2");
  expect(run("nonsense", tmp + "/s3") == 2, "unknown subcommand exits 2");
  expect(run("kernel verify --bound stable-two-sided --scenario " + scen +
                 "/constant.json",
             tmp + "/s4") == 0,
         "stable two-sided bound verification exits 0");
  expect(run("kernel verify --bound no-such-bound --scenario " + scen +
                 "/constant.json",
             tmp + "/s5") == 2,
         "unknown bound id exits 2");

  // determinism: identical runs produce identical summaries up to runtime
  const std::string sim_args = "simulate --scenario " + scen +
                               "/variable.json --paths 4000 --seed 7 "
                               "--eps 1e-2 --dt 1e-2 --horizon 0.5";
  expect(run(sim_args, tmp + "/r1") == 0, "simulate run 1 exits 0");
  expect(run(sim_args, tmp + "/r2") == 0, "simulate run 2 exits 0");
  nlohmann::json a = read_json(tmp + "/r1/simulate_summary.json");
  nlohmann::json b = read_json(tmp + "/r2/simulate_summary.json");
  a.erase("runtime");
  b.erase("runtime");
  expect(a.dump() == b.dump(),
         "summaries are identical apart from the runtime stamp");

  // manifest carries the scenario hash
  nlohmann::json m = read_json(tmp + "/r1/manifest_simulate.json");
  expect(m.contains("input_hashes") &&
             m["input_hashes"].contains("scenario"),
         "manifest embeds the scenario hash");

  // path CSV columns
  expect(run(sim_args + " --out path.csv", tmp + "/r3") == 0,
         "simulate with a path record exits 0");
  {
    std::ifstream csv(tmp + "/r3/path.csv");
    std::string header;
    std::getline(csv, header);
    expect(header == "t,x,jump_z,jump_r,accepted", "path CSV header");
  }

  if (failures) {
    std::printf("%d CLI check(s) failed\n", failures);
    return 1;
  }
  std::printf("all CLI checks passed\n");
  return 0;
}
