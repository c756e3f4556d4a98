#include "doctest.h"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "judgment_corpus.hpp"
#include "modsel/diagnoser.hpp"
#include "modsel/universe.hpp"

using namespace modsel;

namespace {

class FixedJudge : public Backend {
 public:
  explicit FixedJudge(std::string text) : text_(std::move(text)) {}
  std::string complete(const CompletionRequest&) override {
    ++calls;
    return text_;
  }
  bool remote() const override { return false; }
  int calls = 0;

 private:
  std::string text_;
};

std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(MODSEL_GOLDEN_DIR) + "/" + name, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto text = ss.str();
  if (!text.empty() && text.back() == '\n') text.pop_back();
  return text;
}

Task golden_task() {
  return {"arith-001",
          "Table arith-001 has an ID row and a task row.\nID: 7 | 3\n"
          "Task: What is 12+(10.9>10.11)? | What is 48+(10.9>10.11)?\nSolve the task whose ID is 3.",
          "49"};
}

Trace locate_solve_trace(const std::string& final_output) {
  Trace t;
  t.task_id = "arith-001";
  t.allocation = Allocation({ModelId{1}, ModelId{1}});
  t.per_module.push_back({ModuleId{1}, ModelId{1}, "(locate prompt)", "What is 48+(10.9>10.11)?\n",
                          "What is 48+(10.9>10.11)?"});
  t.per_module.push_back({ModuleId{2}, ModelId{1}, "(solve prompt)", " " + final_output + "\n", final_output});
  t.final_output = final_output;
  return t;
}

struct JudgePool {
  std::shared_ptr<FixedJudge> judge;
  ModelPool pool;
};

JudgePool judge_pool(const std::string& verdict) {
  auto judge = std::make_shared<FixedJudge>(verdict);
  return {judge, ModelPool({ModelEntry{"judge", 0.1, 1000, judge}})};
}

}  // namespace

TEST_CASE("locate-solve prompt matches the golden file") {
  const auto graph = builtin_system("locate-solve");
  const auto prompt = render_diagnoser_prompt(graph, locate_solve_trace("48"), golden_task(), ModuleId{2});
  CHECK(prompt == read_golden("diagnoser_locate_solve.txt"));
}

TEST_CASE("prompt structure") {
  const auto graph = builtin_system("locate-solve");
  const auto trace = locate_solve_trace("48");
  const auto p1 = render_diagnoser_prompt(graph, trace, golden_task(), ModuleId{1});
  const auto p2 = render_diagnoser_prompt(graph, trace, golden_task(), ModuleId{2});

  const auto count = [](const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = s.find(needle); at != std::string::npos; at = s.find(needle, at + 1)) ++n;
    return n;
  };
  CHECK(count(p1, "[module ") == 2);
  CHECK(count(p1, "generate 'error: 0'") == 2);
  CHECK(p1.find("analyze whether module 1 leads to the mistake") != std::string::npos);

  REQUIRE(p1.size() == p2.size());
  std::vector<std::size_t> diffs;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    if (p1[i] != p2[i]) diffs.push_back(i);
  }
  REQUIRE(diffs.size() == 1);
  CHECK(p1[diffs[0]] == '1');
  CHECK(p2[diffs[0]] == '2');

  const auto mad = builtin_system("multi-agent-debate");
  Trace six;
  for (int i = 1; i <= 6; ++i) six.per_module.push_back({ModuleId{i}, ModelId{1}, "", "", "out" + std::to_string(i)});
  six.final_output = "out6";
  const auto p = render_diagnoser_prompt(mad, six, golden_task(), ModuleId{4});
  CHECK(count(p, "[module ") == 6);
  CHECK(p.find("[module 3 output]:\nout3\n\n[module 4 output]:\nout4") != std::string::npos);
}

TEST_CASE("error flag corpus") {
  static_assert(std::size(kJudgmentCorpus) == 30);
  for (const auto& c : kJudgmentCorpus) {
    CAPTURE(c.text);
    if (c.expected < 0) {
      CHECK_THROWS_AS(parse_error_flag(c.text), Error);
    } else {
      CHECK(parse_error_flag(c.text) == c.expected);
    }
  }
}

TEST_CASE("combined score arithmetic") {
  const auto graph = builtin_system("locate-solve");
  const auto task = golden_task();
  for (double gamma : {0.0, 0.5, 1.0}) {
    CAPTURE(gamma);
    {
      auto jp = judge_pool("Module 2 answered 48 instead of 49. error: 1");
      const auto r = diagnose(graph, locate_solve_trace("48"), task, ModuleId{2}, {ModelId{1}, gamma, true}, jp.pool);
      CHECK(r.judged);
      CHECK(r.error_flag == 1);
      CHECK(r.estimated_perf == 0);
      CHECK(r.end_to_end == 0);
      CHECK(r.combined_score == 0.0);
    }
    {
      auto jp = judge_pool("Module 1 is to blame. error: 0");
      const auto r = diagnose(graph, locate_solve_trace("48"), task, ModuleId{2}, {ModelId{1}, gamma, true}, jp.pool);
      CHECK(r.estimated_perf == 1);
      CHECK(r.combined_score == 1.0);
    }
    for (bool short_circuit : {true, false}) {
      auto jp = judge_pool("The final output matches the desired answer. error: 0");
      const auto r =
          diagnose(graph, locate_solve_trace("49"), task, ModuleId{1}, {ModelId{1}, gamma, short_circuit}, jp.pool);
      CHECK(r.end_to_end == 1);
      CHECK(r.combined_score == 1.0 + gamma);
      CHECK(r.judged == !short_circuit);
      CHECK(jp.judge->calls == (short_circuit ? 0 : 1));
    }
  }

  auto jp = judge_pool("I am not sure.");
  const auto r = diagnose(graph, locate_solve_trace("48"), task, ModuleId{1}, {ModelId{1}, 0.5, true}, jp.pool);
  CHECK(r.unparseable);
  CHECK(r.error_flag == 0);
  CHECK(r.combined_score == 1.0);

  CHECK_THROWS_AS(diagnose(graph, locate_solve_trace("48"), task, ModuleId{1}, {ModelId{1}, -0.1, true}, jp.pool),
                  Error);
}

TEST_CASE("a perfect judge recovers true module performance") {
  RandomUniverseOptions opts;
  opts.unique_optima = false;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto u = gen_universe(random_template(2, 3, 6, seed, opts), seed);
    auto pool = make_pool(u);
    const auto judge = pool.id(std::string(kJudgeName));
    for (bool short_circuit : {true, false}) {
      for (std::size_t index = 0; index < 9; ++index) {
        const auto f = allocation_from_index(index, 2, 3);
        for (std::size_t z = 0; z < u.tasks.size(); ++z) {
          for (int j = 1; j <= 2; ++j) {
            const ModuleId mj{j};
            const auto r = module_score(u.system, f, u.tasks[z], mj, {judge, 0.0, short_circuit}, pool);
            CAPTURE(f.label());
            CAPTURE(z);
            CHECK(r.estimated_perf == u.spec.p(mj, f.at(mj), z));
            CHECK(r.end_to_end == u.spec.end_to_end(f, z));
            CHECK_FALSE(r.unparseable);
          }
        }
      }
    }
  }
}

TEST_CASE("argmax over candidates ignores a constant gamma shift") {
  RandomUniverseOptions opts;
  opts.unique_optima = false;
  const auto u = gen_universe(random_template(2, 3, 8, 11, opts), 11);
  auto pool = make_pool(u);
  const auto judge = pool.id(std::string(kJudgeName));
  const auto argmax = [&](const Allocation& f, std::size_t z, ModuleId j, double gamma) {
    int best_k = 0;
    double best = -1;
    for (int k = 1; k <= 3; ++k) {
      const auto g = with_substitution(f, j, ModelId{k}, 3);
      const double s = module_score(u.system, g, u.tasks[z], j, {judge, gamma, true}, pool).combined_score;
      if (s > best) {
        best = s;
        best_k = k;
      }
    }
    return best_k;
  };
  std::size_t checked = 0;
  for (std::size_t index = 0; index < 9; ++index) {
    const auto f = allocation_from_index(index, 2, 3);
    for (std::size_t z = 0; z < u.tasks.size(); ++z) {
      for (int j = 1; j <= 2; ++j) {
        const ModuleId mj{j};
        std::set<int> p;
        for (int k = 1; k <= 3; ++k) p.insert(u.spec.end_to_end(with_substitution(f, mj, ModelId{k}, 3), z));
        if (p.size() != 1) continue;
        ++checked;
        CHECK(argmax(f, z, mj, 0.0) == argmax(f, z, mj, 1.0));
      }
    }
  }
  CHECK(checked > 0);
}
