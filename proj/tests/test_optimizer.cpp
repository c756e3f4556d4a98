#include "doctest.h"

#include <algorithm>
#include <set>

#include "modsel/optimizer.hpp"
#include "modsel/universe.hpp"

using namespace modsel;

namespace {

Allocation A(std::initializer_list<int> ids) {
  std::vector<ModelId> m;
  for (int i : ids) m.push_back(ModelId{i});
  return Allocation(std::move(m));
}

struct Fixture {
  Fixture(const UniverseTemplate& tpl, std::uint64_t seed)
      : u(gen_universe(tpl, seed)),
        pool(make_pool(u)),
        models(pool.candidates()),
        judge{pool.id(std::string(kJudgeName)), 0.0, true} {}

  GeneratedUniverse u;
  ModelPool pool;
  std::vector<ModelId> models;
  DiagnoserConfig judge;
};

Fixture fixture(const UniverseTemplate& tpl, std::uint64_t seed) { return Fixture(tpl, seed); }

double brute_force_best(const GeneratedUniverse& u) {
  return static_cast<double>(u.planted_correct) / static_cast<double>(u.tasks.size());
}

}  // namespace

TEST_CASE("mode aggregation") {
  CHECK(mode_aggregate(std::vector{A({1, 2}), A({2, 2}), A({1, 2})}) == A({1, 2}));
  CHECK(mode_aggregate(std::vector{A({2, 1}), A({1, 3})}) == A({1, 3}));
  CHECK(mode_aggregate(std::vector{A({3, 3}), A({2, 2}), A({3, 3}), A({2, 2}), A({4, 1})}) == A({2, 2}));
  CHECK(mode_aggregate(std::vector{A({4})}) == A({4}));
  CHECK_THROWS(mode_aggregate(std::vector<Allocation>{}));
}

TEST_CASE("cost ledger refuses to overspend") {
  CostLedger ledger(5);
  ledger.charge(3);
  CHECK(ledger.affordable(2));
  CHECK_FALSE(ledger.affordable(3));
  CHECK_THROWS_AS(ledger.charge(3), BudgetExhausted);
  CHECK(ledger.spent() == 3);
}

TEST_CASE("initial allocation is seeded and stays within the candidates") {
  const std::vector<ModelId> models{ModelId{2}, ModelId{5}};
  const auto f = initial_allocation(4, models, 9);
  CHECK(f == initial_allocation(4, models, 9));
  for (auto m : f.models()) CHECK((m == ModelId{2} || m == ModelId{5}));
  bool differs = false;
  for (std::uint64_t s = 0; s < 20 && !differs; ++s) differs = initial_allocation(4, models, s) != f;
  CHECK(differs);
}

TEST_CASE("selector bookkeeping") {
  auto fx = fixture(random_template(3, 4, 12, 5), 5);
  const auto K = fx.models.size();
  const auto r = llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 100, fx.judge);
  CHECK(r.optimizer == "llmselector");
  CHECK(r.converged);
  CHECK(r.allocations_evaluated == r.iterations * K);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    CHECK(r.history[i].iteration == i);
    CHECK(r.history[i].cost == i * K);
  }
  CHECK(r.history.back().allocation == r.best_allocation);
  CHECK(r.train_accuracy == brute_force_best(fx.u));

  const auto again = llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 100, fx.judge);
  CHECK(again.best_allocation == r.best_allocation);
  CHECK(again.history.size() == r.history.size());
  CHECK(curve_csv(again) == curve_csv(r));
}

TEST_CASE("budget limits") {
  auto fx = fixture(random_template(2, 3, 8, 2), 2);
  CHECK_THROWS_AS(llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 2, fx.judge), Error);
  CHECK_THROWS_AS(greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 2), Error);
  CHECK_THROWS_AS(random_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 0), Error);

  for (std::size_t budget : {3u, 4u, 5u, 7u}) {
    CAPTURE(budget);
    const auto s = llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, budget, fx.judge);
    CHECK(s.allocations_evaluated == (budget / 3) * 3);
    CHECK_FALSE(s.converged);
    const auto g = greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, budget);
    CHECK(g.allocations_evaluated == (budget / 3) * 3);
    const auto rnd = random_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, budget);
    CHECK(rnd.allocations_evaluated == budget);
  }
}

TEST_CASE("single candidate model") {
  auto fx = fixture(random_template(3, 2, 6, 4), 4);
  const std::vector<ModelId> one{fx.models[1]};
  const auto r = llmselector(fx.u.system, fx.pool, one, fx.u.tasks, 50, fx.judge);
  CHECK(r.best_allocation == uniform_allocation(3, fx.models[1]));
  CHECK(r.converged);
  CHECK(r.iterations == 4);  // L+1 identical aggregates including f0
  CHECK(r.allocations_evaluated == 4);
  const auto g = greedy_search(fx.u.system, fx.pool, one, fx.u.tasks, 50);
  CHECK(g.allocations_evaluated == 4);
  const auto e = exhaustive_search(fx.u.system, fx.pool, one, fx.u.tasks);
  CHECK(e.allocations_evaluated == 1);
}

TEST_CASE("random search over the whole space matches exhaustive") {
  auto fx = fixture(random_template(2, 4, 10, 8, {false, 0.7, "chain"}), 8);
  const auto e = exhaustive_search(fx.u.system, fx.pool, fx.models, fx.u.tasks);
  CHECK(e.allocations_evaluated == 16);
  CHECK(e.train_accuracy == brute_force_best(fx.u));
  CHECK(e.best_allocation == fx.u.planted_optimum);
  for (std::size_t i = 0; i + 1 < e.history.size(); ++i) CHECK(e.history[i].allocation < e.history[i + 1].allocation);

  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SearchOptions o;
    o.seed = seed;
    const auto r = random_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 40, o);
    CHECK(r.allocations_evaluated == 16);
    CHECK(r.train_accuracy == e.train_accuracy);
    CHECK(r.best_allocation == e.best_allocation);  // ties resolve to the smallest, as in exhaustive
    std::set<Allocation> distinct;
    for (const auto& h : r.history) distinct.insert(h.allocation);
    CHECK(distinct.size() == 16);
  }

  SearchOptions capped;
  capped.enumeration_cap = 15;
  CHECK_THROWS_AS(exhaustive_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, capped), Error);
}

TEST_CASE("explicit start pins f0") {
  auto fx = fixture(greedy_trap_template(3), 3);
  const auto mini = fx.pool.id("sim-gpt-4o-mini");
  SearchOptions o;
  o.start = uniform_allocation(2, mini);
  const auto g = greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 50, o);
  CHECK(g.history.front().allocation == *o.start);
  CHECK(g.best_allocation == *o.start);
  CHECK(g.train_accuracy < brute_force_best(fx.u));

  SearchOptions bad;
  bad.start = A({1});
  CHECK_THROWS_AS(greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 50, bad), Error);
  bad.start = uniform_allocation(2, fx.pool.id(std::string(kJudgeName)));
  CHECK_THROWS_AS(llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 50, fx.judge, bad), Error);
}

TEST_CASE("greedy repairs the nominated module but falls off a zero plateau") {
  auto tpl = random_template(3, 4, 10, 6, {false, 0.7, "chain"});
  for (std::size_t z = 0; z < 10; ++z) {
    for (int i = 1; i <= 3; ++i) {
      for (int k = 1; k <= 4; ++k) tpl.spec.set(ModuleId{i}, ModelId{k}, z, k == 3);
    }
  }
  auto fx = fixture(tpl, 6);
  const auto dominant = uniform_allocation(3, ModelId{3});

  // module 2 is nominated first
  SearchOptions o;
  o.start = with_substitution(dominant, ModuleId{2}, ModelId{1}, 4);
  auto g = greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 60, o);
  CHECK(g.history.front().train_accuracy == 0.0);
  CHECK(g.history[1].allocation == dominant);
  CHECK(g.train_accuracy == 1.0);

  // every swap of module 2 scores 0 here, so the tie goes to model 1 and the
  // search never recovers; the judge sees which module is at fault
  o.start = with_substitution(dominant, ModuleId{1}, ModelId{1}, 4);
  g = greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 60, o);
  CHECK(g.best_allocation == uniform_allocation(3, ModelId{1}));
  CHECK(g.train_accuracy == 0.0);
  const auto s = llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 60, fx.judge, o);
  CHECK(s.train_accuracy == 1.0);
}

TEST_CASE("with a perfect judge and unique optima the selector never trails greedy") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    CAPTURE(seed);
    RandomUniverseOptions opts;
    opts.wiring = seed % 3 == 0 ? "self-refine" : "chain";
    auto fx = fixture(random_template(3, 3, 10, seed, opts), seed);
    SearchOptions o;
    o.seed = seed;
    const auto g = greedy_search(fx.u.system, fx.pool, fx.models, fx.u.tasks, 60, o);
    const auto s = llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 60, fx.judge, o);
    CHECK(g.history.front().allocation == s.history.front().allocation);
    CHECK(s.train_accuracy >= g.train_accuracy);
  }
}

TEST_CASE("evaluation split and recorded diagnoses") {
  auto fx = fixture(random_template(2, 3, 12, 10), 10);
  const auto split = split_dataset(fx.u.tasks, 0.5, 1);
  SearchOptions o;
  o.eval_tasks = split.eval;
  o.record_diagnoses = true;
  o.workers = 3;
  const auto r = llmselector(fx.u.system, fx.pool, fx.models, split.train, 30, fx.judge, o);
  REQUIRE(r.eval_accuracy.has_value());
  CHECK(*r.eval_accuracy >= 0.0);
  CHECK(r.diagnoses.size() == r.iterations * split.train.size() * fx.models.size());
  std::size_t judged = 0;
  for (const auto& d : r.diagnoses) judged += d.judged ? 1 : 0;
  CHECK(judged == r.judge_calls);

  const auto csv = curve_csv(r);
  CHECK(csv.rfind("cost,allocation,train_accuracy,best_train_accuracy\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == r.history.size() + 1);
}

TEST_CASE("a backend call limit ends the search without throwing") {
  auto fx = fixture(random_template(2, 3, 8, 12), 12);
  fx.pool.set_call_limit(40);
  OptimizerReport r;
  CHECK_NOTHROW(r = llmselector(fx.u.system, fx.pool, fx.models, fx.u.tasks, 300, fx.judge));
  CHECK(r.budget_exhausted);
  CHECK(r.history.size() == r.iterations + 1);
  CHECK(r.allocations_evaluated == r.iterations * fx.models.size());
}
