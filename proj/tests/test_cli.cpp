#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "modsel/cli.hpp"
#include "modsel/universe.hpp"

using namespace modsel;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "modsel");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("modsel_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const fs::path kData = MODSEL_DATA_DIR;

}  // namespace

TEST_CASE("gen reproduces the bundled data") {
  const auto dir = scratch("gen");
  auto r = cli({"gen", "table-arithmetic", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "table-arithmetic.jsonl") == slurp(kData / "datasets/table-arithmetic.jsonl"));
  r = cli({"gen", "table-bias", "--out", dir.string(), "--seed", "0"});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "table-bias.jsonl") == slurp(kData / "datasets/table-bias.jsonl"));

  for (const std::string name : {"case-study", "greedy-trap", "self-refine-trap"}) {
    CAPTURE(name);
    const auto udir = dir / name;
    r = cli({"gen", "universe", "--template", name, "--seed", "1", "--out", udir.string()});
    REQUIRE(r.code == 0);
    for (const char* f : {"system.json", "pool.json", "dataset.jsonl", "optimum.json", "manifest.json"}) {
      CAPTURE(f);
      CHECK(slurp(udir / f) == slurp(kData / "universes" / name / f));
    }
  }

  r = cli({"gen", "table-arithmetic", "--out", dir.string(), "--n", "3", "--entries", "4", "--seed", "2"});
  CHECK(r.code == 0);
  CHECK(load_dataset(dir / "table-arithmetic.jsonl").size() == 3);

  r = cli({"gen", "gsm8k", "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("UnknownBenchmark") != std::string::npos);
  CHECK(cli({"gen", "universe", "--template", "nope", "--out", dir.string()}).code == 1);
}

TEST_CASE("check reports each assumption") {
  const auto dir = scratch("check");
  const auto good = gen_universe(random_template(3, 3, 6, 2), 2);
  std::ofstream(dir / "good.json") << universe_fixture_json(good);
  auto r = cli({"check", (dir / "good.json").string()});
  CHECK(r.code == 0);
  CHECK(r.out == "intra-monotone: pass\ninter-monotone: pass\nunique optimum: pass 6/6 tasks\n");

  PerfTable bad(2, 2, 1);
  for (std::size_t idx = 0; idx < 4; ++idx) {
    const auto f = allocation_from_index(idx, 2, 2);
    bad.set(ModuleId{1}, f, 0, f.at(ModuleId{1}) == f.at(ModuleId{2}));
    bad.set(ModuleId{2}, f, 0, 1);
  }
  std::ofstream(dir / "bad.json") << perf_table_json(bad);
  r = cli({"check", (dir / "bad.json").string()});
  CHECK(r.code == 3);
  CHECK(r.out.find("intra-monotone: FAIL module 1") != std::string::npos);

  r = cli({"check", (kData / "universes/case-study/pool.json").string(), "--cap", "10"});
  CHECK(r.code == 1);
  CHECK(r.err.find("EnumerationTooLarge") != std::string::npos);
  CHECK(cli({"check", (dir / "missing.json").string()}).code == 1);
}

TEST_CASE("optimize writes a complete run directory") {
  const auto out = scratch("run");
  const auto r = cli({"optimize", "--manifest", (kData / "universes/case-study/manifest.json").string(), "--out",
                      out.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find(R"(best allocation: {"locate":"sim-claude","solve":"sim-gemini"})") != std::string::npos);
  CHECK(r.out.find("eval accuracy: 1.00") != std::string::npos);

  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(report["optimizer"] == "llmselector");
  CHECK(report["judge"] == "sim-judge");
  CHECK(report["train_size"] == 50);
  CHECK(report["eval_size"] == 50);
  CHECK(report["eval_accuracy"] == 1.0);
  CHECK(report["allocations_to_best"] == 10);

  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(fs::path(manifest["models"].get<std::string>()).is_absolute());
  CHECK(manifest["budget"] == 25);
  CHECK(fs::exists(out / "curve.csv"));
  CHECK(fs::exists(out / "diagnoses.jsonl"));
  const auto stats = nlohmann::json::parse(slurp(out / "stats.json"));
  CHECK(stats["backend_calls"].get<int>() > 0);
  CHECK(stats["remote_calls"] == 0);

  std::size_t traces = 0;
  for (const auto& e : fs::directory_iterator(out / "traces" / "3-4")) traces += e.path().extension() == ".json";
  CHECK(traces == 100);

  // a saved manifest replays the run from anywhere
  const auto again = scratch("rerun");
  const auto r2 = cli({"optimize", "--manifest", (out / "manifest.json").string(), "--out", again.string()});
  CHECK(r2.code == 0);
  CHECK(slurp(again / "report.json") == slurp(out / "report.json"));
}

TEST_CASE("flags override the manifest") {
  const auto out = scratch("override");
  const auto manifest = (kData / "universes/case-study/manifest.json").string();
  auto r = cli({"optimize", "--manifest", manifest, "--optimizer", "exhaustive", "--out", out.string()});
  REQUIRE(r.code == 0);
  auto report = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(report["optimizer"] == "exhaustive");
  CHECK(report["allocations_evaluated"] == 25);
  CHECK(report["judge"].is_null());

  r = cli({"optimize", "--manifest", manifest, "--optimizer", "greedy", "--start",
           "locate=sim-gpt-4o-mini,solve=sim-gpt-4o-mini", "--out", out.string()});
  REQUIRE(r.code == 0);
  report = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(report["history"][0]["allocation"]["locate"] == "sim-gpt-4o-mini");

  r = cli({"optimize", "--manifest", manifest, "--optimizer", "random", "--budget", "7", "--seed", "3", "--out",
           out.string()});
  REQUIRE(r.code == 0);
  report = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(report["allocations_evaluated"] == 7);
  CHECK(report["seed"] == 3);
}

TEST_CASE("configuration and endpoint errors map to exit codes") {
  const auto dir = scratch("errors");
  const auto pool = (kData / "universes/case-study/pool.json").string();
  const auto data = (kData / "universes/case-study/dataset.jsonl").string();
  const auto out = (dir / "out").string();

  std::ofstream(dir / "cycle.json") << R"({"name":"bad","modules":[{"name":"a","template":"{module:b}",)"
                                       R"("inputs":["b"]},{"name":"b","template":"{module:a}","inputs":["a"]}]})";
  auto r = cli({"optimize", "--system", (dir / "cycle.json").string(), "--models", pool, "--dataset", data, "--out",
                out});
  CHECK(r.code == 1);
  CHECK(r.err.find("CycleDetected") != std::string::npos);

  r = cli({"optimize", "--system", "multi-agent-debate", "--models", pool, "--dataset", data, "--optimizer",
           "exhaustive", "--out", out});
  CHECK(r.code == 1);
  CHECK(r.err.find("EnumerationTooLarge") != std::string::npos);

  r = cli({"optimize", "--system", "locate-solve", "--models", pool, "--dataset", data, "--budget", "3", "--out",
           out});
  CHECK(r.code == 1);
  r = cli({"optimize", "--system", "locate-solve", "--models", pool, "--dataset", data, "--optimizer", "bayes",
           "--out", out});
  CHECK(r.code == 1);
  r = cli({"optimize", "--system", "locate-solve", "--models", pool, "--dataset", data, "--judge", "gpt-9",
           "--out", out});
  CHECK(r.code == 1);
  CHECK(cli({"optimize", "--system", "locate-solve", "--models", pool, "--dataset", data}).code == 1);
  CHECK(cli({"optimize", "--models", pool, "--dataset", data, "--out", out}).code == 1);

  ::unsetenv("MODSEL_CLI_TEST_KEY");
  std::ofstream(dir / "remote.json") << R"({"name":"remote","models":[{"name":"api","backend":"remote",)"
                                        R"("base_url":"http://127.0.0.1:1/v1","auth_env":"MODSEL_CLI_TEST_KEY",)"
                                        R"("model":"x"}]})";
  r = cli({"optimize", "--system", "locate-solve", "--models", (dir / "remote.json").string(), "--dataset", data,
           "--optimizer", "random", "--budget", "1", "--out", out});
  CHECK(r.code == 2);
}

TEST_CASE("manifest parsing") {
  const auto cfg = parse_manifest(R"({"system":"locate-solve","models":"pool.json","dataset":"d.jsonl",
                                      "optimizer":"greedy","budget":10,"seed":4})",
                                  "/srv/runs");
  CHECK(cfg.system == "locate-solve");
  CHECK(cfg.models == fs::path("/srv/runs/pool.json"));
  CHECK(cfg.optimizer == "greedy");
  CHECK(cfg.budget == 10);
  CHECK(cfg.seed == 4);
  CHECK(cfg.split == 0.5);
  CHECK_FALSE(cfg.judge.has_value());
  CHECK_THROWS_AS(parse_manifest("{", "."), Error);
  CHECK_THROWS_AS(parse_manifest(R"({"system":"x"})", "."), Error);
}
