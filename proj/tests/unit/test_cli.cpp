#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "canhil/service/json_io.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CANHIL_CLI + "\" " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("canhil-cli-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string scenario(const std::string& name) {
  return (oracle::source_dir() / "scenarios" / (name + ".json")).string();
}

}  // namespace

TEST(Cli, RunWritesPassingBundle) {
  const auto dir = temp_dir("run");
  const auto r = run_cli("run " + scenario("brake") + " --out " + (dir / "a").string());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "a" / "summary.json"));
  const auto rep = run_cli("report " + (dir / "a").string());
  EXPECT_EQ(rep.code, 0);
  EXPECT_NE(rep.output.find("PASSED"), std::string::npos) << rep.output;
  fs::remove_all(dir);
}

TEST(Cli, SeedOverrideIsReproducible) {
  const auto dir = temp_dir("seed");
  const std::string s = scenario("light");
  ASSERT_EQ(run_cli("run " + s + " --seed 7 --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(run_cli("run " + s + " --seed 7 --out " + (dir / "b").string()).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path().filename();
    ++files;
  }
  EXPECT_GE(files, 5u);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  auto r = run_cli("run /no/such/scenario.json");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("/no/such/scenario.json"), std::string::npos) << r.output;

  EXPECT_EQ(run_cli("run " + scenario("brake") + " --frobnicate").code, 2);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("eval").code, 2);

  const auto dir = temp_dir("codes");
  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << R"({"format_version": 1, "name": "x", "nodes": [{"name": "A", "index": 1, "role": "Sensors"},
    {"name": "A", "index": 2, "role": "Lights"}], "script": []})";
  r = run_cli("run " + bad.string() + " --out " + (dir / "o").string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("ValidationError"), std::string::npos);

  const fs::path failing = dir / "failing.json";
  std::ofstream(failing) << R"({"format_version": 1, "name": "f", "stop_us": 50000,
    "nodes": [{"name": "ECU1", "index": 1, "role": "EngineBrake"}, {"name": "ECU2", "index": 2, "role": "AirbagLight"},
              {"name": "ECU3", "index": 3, "role": "Sensors"}, {"name": "ECU4", "index": 4, "role": "Lights"}],
    "script": [{"at_us": 1000, "op": "expect", "within_us": 1000,
                "actuation": {"node": "ECU2", "actuator": "airbag_deployed", "value": true}}]})";
  r = run_cli("run " + failing.string() + " --out " + (dir / "f").string());
  EXPECT_EQ(r.code, 1) << r.output;

  const fs::path empty = dir / "empty.csv";
  std::ofstream(empty) << "";
  r = run_cli("replay " + empty.string() + " --model " + (oracle::source_dir() / "models/ids-int4.json").string());
  EXPECT_NE(r.code, 0);
  r = run_cli("replay " + empty.string() + " --model " + (dir / "missing-model.json").string());
  EXPECT_NE(r.code, 0);
  fs::remove_all(dir);
}

TEST(Cli, EvalPerfectPredictions) {
  const auto dir = temp_dir("eval");
  const fs::path p = dir / "pred.csv";
  {
    std::ofstream out(p);
    out << "# truth,predicted\n";
    for (const char* c : {"Benign", "DoS", "Fuzzing", "Spoof"}) out << c << "," << c << "\n";
  }
  const auto r = run_cli("--format records eval --predictions " + p.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = canhil::service::Json::parse(r.output);
  EXPECT_DOUBLE_EQ(j.at("metrics").at("accuracy").get<double>(), 1.0);
  EXPECT_EQ(j.at("metrics").at("total"), 4);

  std::ofstream(p) << "Benign,Nope\n";
  EXPECT_EQ(run_cli("eval --predictions " + p.string()).code, 3);
  fs::remove_all(dir);
}
