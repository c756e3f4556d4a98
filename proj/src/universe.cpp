#include "modsel/universe.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "json.hpp"
#include "modsel/diagnoser.hpp"
#include "modsel/rng.hpp"

namespace modsel {

using nlohmann::json;
using nlohmann::ordered_json;

// --- tables ------------------------------------------------------------------

UniverseSpec::UniverseSpec(std::size_t modules, std::size_t models, std::size_t tasks)
    : modules_(modules), models_(models), tasks_(tasks), perf_(modules * models * tasks, 0) {}

std::size_t UniverseSpec::slot(ModuleId i, ModelId k, std::size_t z) const {
  if (i.index < 1 || static_cast<std::size_t>(i.index) > modules_) throw Error(ErrorCode::UnknownModule, "module out of range");
  if (k.index < 1 || static_cast<std::size_t>(k.index) > models_) throw Error(ErrorCode::UnknownModel, "model out of range");
  if (z >= tasks_) throw std::out_of_range("task index out of range");
  return (static_cast<std::size_t>(i.index - 1) * models_ + static_cast<std::size_t>(k.index - 1)) * tasks_ + z;
}

int UniverseSpec::end_to_end(const Allocation& f, std::size_t z) const {
  for (std::size_t i = 1; i <= modules_; ++i) {
    const ModuleId m{static_cast<int>(i)};
    if (p(m, f.at(m), z) == 0) return 0;
  }
  return 1;
}

PerfTable::PerfTable(std::size_t modules, std::size_t models, std::size_t tasks, std::size_t cap)
    : modules_(modules), models_(models), tasks_(tasks), allocations_(0) {
  const auto space = allocation_space_size(modules, models, cap);
  if (!space) {
    throw Error(ErrorCode::EnumerationTooLarge, std::to_string(models) + "^" + std::to_string(modules) +
                                                    " allocations exceed the enumeration cap of " +
                                                    std::to_string(cap));
  }
  allocations_ = *space;
  perf_.assign(modules * allocations_ * tasks, 0);
}

PerfTable PerfTable::expand(const UniverseSpec& spec, std::size_t cap) {
  PerfTable t(spec.modules(), spec.models(), spec.tasks(), cap);
  for (std::size_t fi = 0; fi < t.allocations_; ++fi) {
    const auto f = allocation_from_index(fi, t.modules_, t.models_);
    for (std::size_t i = 1; i <= t.modules_; ++i) {
      const ModuleId m{static_cast<int>(i)};
      for (std::size_t z = 0; z < t.tasks_; ++z) t.set(m, f, z, spec.p(m, f.at(m), z));
    }
  }
  return t;
}

std::size_t PerfTable::slot(ModuleId i, const Allocation& f, std::size_t z) const {
  if (i.index < 1 || static_cast<std::size_t>(i.index) > modules_) throw Error(ErrorCode::UnknownModule, "module out of range");
  if (z >= tasks_) throw std::out_of_range("task index out of range");
  return (static_cast<std::size_t>(i.index - 1) * allocations_ + allocation_index(f, models_)) * tasks_ + z;
}

int PerfTable::p(ModuleId i, const Allocation& f, std::size_t z) const { return perf_[slot(i, f, z)]; }
void PerfTable::set(ModuleId i, const Allocation& f, std::size_t z, int value) { perf_[slot(i, f, z)] = value ? 1 : 0; }

int PerfTable::end_to_end(const Allocation& f, std::size_t z) const {
  for (std::size_t i = 1; i <= modules_; ++i) {
    if (p(ModuleId{static_cast<int>(i)}, f, z) == 0) return 0;
  }
  return 1;
}

// --- checkers ----------------------------------------------------------------

namespace {

/// Each allocation with module i fixed to model 1: the contexts of module i.
std::vector<Allocation> contexts(const PerfTable& t, ModuleId i) {
  std::vector<Allocation> out;
  for (std::size_t fi = 0; fi < t.allocations(); ++fi) {
    auto f = allocation_from_index(fi, t.modules(), t.models());
    if (f.at(i).index == 1) out.push_back(std::move(f));
  }
  return out;
}

Allocation sub(const Allocation& f, ModuleId i, int k, std::size_t K) { return with_substitution(f, i, ModelId{k}, K); }

}  // namespace

std::optional<IntraCounterexample> check_intra_monotone(const PerfTable& t) {
  const std::size_t K = t.models();
  for (std::size_t ii = 1; ii <= t.modules(); ++ii) {
    const ModuleId i{static_cast<int>(ii)};
    const auto ctx = contexts(t, i);
    for (std::size_t z = 0; z < t.tasks(); ++z) {
      for (int k = 1; k <= static_cast<int>(K); ++k) {
        for (int kp = 1; kp <= static_cast<int>(K); ++kp) {
          if (k == kp) continue;
          for (const auto& c : ctx) {
            if (t.p(i, sub(c, i, k, K), z) < t.p(i, sub(c, i, kp, K), z)) continue;
            for (const auto& cp : ctx) {
              if (t.p(i, sub(cp, i, k, K), z) < t.p(i, sub(cp, i, kp, K), z)) {
                return IntraCounterexample{i, ModelId{k}, ModelId{kp}, z, sub(c, i, k, K), sub(cp, i, k, K)};
              }
            }
          }
        }
      }
    }
  }
  return std::nullopt;
}

std::optional<InterCounterexample> check_inter_monotone(const PerfTable& t) {
  const std::size_t K = t.models();
  for (std::size_t ii = 1; ii <= t.modules(); ++ii) {
    const ModuleId i{static_cast<int>(ii)};
    const auto ctx = contexts(t, i);
    for (std::size_t z = 0; z < t.tasks(); ++z) {
      for (int k = 1; k <= static_cast<int>(K); ++k) {
        for (int kp = 1; kp <= static_cast<int>(K); ++kp) {
          if (k == kp) continue;
          for (const auto& c : ctx) {
            if (t.p(i, sub(c, i, k, K), z) <= t.p(i, sub(c, i, kp, K), z)) continue;
            for (const auto& cp : ctx) {
              for (std::size_t jj = 1; jj <= t.modules(); ++jj) {
                const ModuleId j{static_cast<int>(jj)};
                if (t.p(j, sub(cp, i, k, K), z) < t.p(j, sub(cp, i, kp, K), z)) {
                  return InterCounterexample{i, j, ModelId{k}, ModelId{kp}, z, sub(c, i, k, K), sub(cp, i, k, K)};
                }
              }
            }
          }
        }
      }
    }
  }
  return std::nullopt;
}

OptimumCheck check_unique_optimum(const PerfTable& t, std::size_t task) {
  if (task >= t.tasks()) throw std::out_of_range("task index out of range");
  OptimumCheck out;
  out.best = -1;
  for (std::size_t fi = 0; fi < t.allocations(); ++fi) {
    auto f = allocation_from_index(fi, t.modules(), t.models());
    const int v = t.end_to_end(f, task);
    if (v > out.best) {
      out.best = v;
      out.maximizers.clear();
    }
    if (v == out.best) out.maximizers.push_back(std::move(f));
  }
  out.unique = out.maximizers.size() == 1;
  return out;
}

// --- realization ---------------------------------------------------------------

std::vector<std::string> GeneratedUniverse::model_names() const {
  std::vector<std::string> out;
  for (const auto& m : models) out.push_back(m.name);
  return out;
}

namespace {

[[noreturn]] void infeasible(const std::string& msg) { throw Error(ErrorCode::InfeasibleSpec, msg); }

SystemGraph abstract_system(const std::string& wiring, std::size_t L) {
  std::vector<ModuleNode> nodes;
  std::string name;
  if (wiring == "chain") {
    name = "chain-" + std::to_string(L);
    for (std::size_t i = 1; i <= L; ++i) {
      ModuleNode n;
      n.id = ModuleId{static_cast<int>(i)};
      n.name = "m" + std::to_string(i);
      n.inputs.push_back(InputSource::query());
      if (i > 1) n.inputs.push_back(InputSource::from(ModuleId{static_cast<int>(i - 1)}));
      nodes.push_back(std::move(n));
    }
  } else {
    const auto base = builtin_system(wiring);
    if (base.size() != L) {
      infeasible(wiring + " has " + std::to_string(base.size()) + " modules, the universe spec has " + std::to_string(L));
    }
    name = wiring + "-abstract";
    for (const auto& b : base.modules()) {
      ModuleNode n;
      n.id = b.id;
      n.name = b.name;
      n.inputs = b.inputs;
      n.description = b.description;
      nodes.push_back(std::move(n));
    }
  }
  for (auto& n : nodes) {
    std::string tpl = "[stage " + n.name + "]\n";
    for (const auto& in : n.inputs) {
      if (in.is_query()) {
        tpl += "query: {query}\n";
      } else {
        const auto& src = nodes[static_cast<std::size_t>(in.module->index - 1)].name;
        tpl += "input " + src + ": {module:" + src + "}\n";
      }
    }
    n.prompt_template = std::move(tpl);
  }
  SystemGraph g(name, std::move(nodes));
  if (const auto err = validate(g)) infeasible("abstract wiring is invalid: " + err->message);
  return g;
}

std::string key_of(const SimulatedRole& proto, std::string_view prompt) {
  SimulatedModelSpec probe;
  probe.roles.push_back(proto);
  const auto resolved = probe.resolve(prompt);
  if (!resolved) infeasible("role " + proto.role + " does not recognize its own prompt");
  return resolved->second;
}

void record(std::map<std::string, std::string>& rules, const std::string& key, const std::string& text,
            const std::string& who) {
  const auto [it, inserted] = rules.emplace(key, text);
  if (!inserted && it->second != text) {
    infeasible(who + " would need two different answers to the same prompt (key '" + key + "')");
  }
}

std::string judge_text(int j, const std::string& module_name, bool final_ok, bool own_ok) {
  const auto m = "Module " + std::to_string(j) + " (" + module_name + ")";
  if (final_ok) return "The final output matches the desired answer. error: 0";
  if (own_ok) return m + " handled its input correctly; the mistake comes from another module. error: 0";
  return m + " produced a wrong output and the final output inherits the mistake. error: 1";
}

struct Step {
  std::string text;
  bool ok = false;
};

}  // namespace

GeneratedUniverse gen_universe(const UniverseTemplate& tpl, std::uint64_t seed) {
  const auto& spec = tpl.spec;
  const std::size_t L = spec.modules();
  const std::size_t K = spec.models();
  const std::size_t n = spec.tasks();
  if (L == 0 || K == 0 || n == 0) infeasible("universe needs at least one module, model and task");
  if (tpl.model_names.size() != K) infeasible("model_names does not match the universe spec's model count");
  const auto space = allocation_space_size(L, K, 10000);
  if (!space) throw Error(ErrorCode::EnumerationTooLarge, "universe exceeds the enumeration cap");

  const bool table = tpl.realization == Realization::TableArithmetic;
  SystemGraph graph = table ? builtin_system("locate-solve") : abstract_system(tpl.wiring, L);
  if (table && (L != 2 || tpl.tables.size() != n)) infeasible("table realization needs 2 modules and one table per task");
  if (!table && tpl.task_ids.size() != n) infeasible("task_ids does not match the universe spec's task count");

  std::vector<Task> tasks;
  for (std::size_t z = 0; z < n; ++z) {
    if (table) {
      tasks.push_back(tpl.tables[z].task());
    } else {
      const auto& id = tpl.task_ids[z];
      tasks.push_back({id, "Task " + id + ": pass the request through every stage.",
                       id + ": " + graph.module(graph.output_module()).name + "=ok, upstream=ok"});
    }
  }

  const auto order = topological_order(graph);
  std::vector<SimulatedRole> module_roles;
  std::vector<SimulatedRole> judge_roles;
  for (const auto& node : graph.modules()) {
    SimulatedRole r;
    r.role = node.name;
    if (table) {
      if (node.id.index == 1) {
        r.match = "Extract the task whose ID is requested";
        r.fields = {{"Table ", " has"}, {"Solve the task whose ID is ", "."}};
      } else {
        r.match = "Answer the following task.";
        r.fields = {{"\n\nTask: ", ""}};
      }
    } else {
      r.match = "[stage " + node.name + "]\n";
      r.fields = {{"", ""}};
    }
    module_roles.push_back(std::move(r));

    SimulatedRole jr;
    jr.role = "diagnose-" + std::to_string(node.id.index);
    jr.match = "analyze whether module " + std::to_string(node.id.index) + " leads";
    if (table) jr.fields.push_back({"[query]:\nTable ", " has"});
    for (const auto m : order) jr.fields.push_back({"[module " + std::to_string(m.index) + " output]:\n", "\n\n["});
    judge_roles.push_back(std::move(jr));
  }

  // table realization: which cell each fallible locator picks, and solver
  // competence as a function of X
  std::vector<std::vector<std::size_t>> wrong_cell(K, std::vector<std::size_t>(n, 0));
  std::vector<std::map<long long, int>> solves(K);
  std::vector<int> always_solves(K, 1);
  if (table) {
    Rng rng(derive_seed(seed, "wrong-cell"));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t z = 0; z < n; ++z) {
        const auto& t = tpl.tables[z];
        const std::size_t target = t.target_position();
        const long long x = t.values[target];
        const bool left_first = rng.chance(0.5);
        bool found = false;
        for (std::size_t d = 1; d < t.values.size() && !found; ++d) {
          for (int side = 0; side < 2 && !found; ++side) {
            const bool left = (side == 0) == left_first;
            if (left && d > target) continue;
            const std::size_t pos = left ? target - d : target + d;
            if (pos >= t.values.size()) continue;
            if (std::llabs(t.values[pos] - x) >= 2) {
              wrong_cell[k][z] = pos;
              found = true;
            }
          }
        }
        if (!found && spec.p(ModuleId{1}, ModelId{static_cast<int>(k + 1)}, z) == 0) {
          infeasible("table " + t.table_id + " has no cell a wrong locator could return");
        }
        const int v = spec.p(ModuleId{2}, ModelId{static_cast<int>(k + 1)}, z);
        const auto [it, inserted] = solves[k].emplace(x, v);
        if (!inserted && it->second != v) {
          infeasible(tpl.model_names[k] + " must both solve and fail X=" + std::to_string(x));
        }
        if (v == 0) always_solves[k] = 0;
      }
    }
  }
  const auto solves_x = [&](std::size_t k, long long x) {
    const auto it = solves[k].find(x);
    return it == solves[k].end() ? always_solves[k] == 1 : it->second == 1;
  };

  std::vector<std::vector<std::map<std::string, std::string>>> rules(K, std::vector<std::map<std::string, std::string>>(L));
  std::vector<std::map<std::string, std::string>> judge_rules(L);

  for (std::size_t fi = 0; fi < *space; ++fi) {
    const auto f = allocation_from_index(fi, L, K);
    for (std::size_t z = 0; z < n; ++z) {
      const auto& task = tasks[z];
      Trace trace;
      trace.task_id = task.id;
      trace.allocation = f;
      std::vector<std::string> outputs(L + 1);
      std::vector<int> own(L + 1, 0), clean(L + 1, 0);
      std::size_t located = 0;
      for (const auto m : order) {
        const auto& node = graph.module(m);
        const auto k = f.at(m);
        const auto ki = static_cast<std::size_t>(k.index - 1);
        const auto prompt = render_template(
            node.prompt_template, [&]() -> const std::string& { return task.question; },
            [&](const std::string& name) -> const std::string& {
              return outputs[static_cast<std::size_t>(graph.find(name)->index)];
            });
        Step step;
        if (table && m.index == 1) {
          const auto& t = tpl.tables[z];
          step.ok = spec.p(m, k, z) == 1;
          located = step.ok ? t.target_position() : wrong_cell[ki][z];
          step.text = t.task_row[located];
        } else if (table) {
          const long long x = tpl.tables[z].values[located];
          step.ok = solves_x(ki, x);
          step.text = step.ok ? arithmetic_answer(x) : std::to_string(x);
        } else {
          step.ok = spec.p(m, k, z) == 1;
          bool upstream = true;
          for (const auto& in : node.inputs) {
            if (!in.is_query()) upstream = upstream && clean[static_cast<std::size_t>(in.module->index)] == 1;
          }
          clean[static_cast<std::size_t>(m.index)] = step.ok && upstream;
          step.text = task.id + ": " + node.name + "=" + (step.ok ? "ok" : "bad") +
                      ", upstream=" + (upstream ? "ok" : "bad");
        }
        own[static_cast<std::size_t>(m.index)] = step.ok;
        const auto idx = static_cast<std::size_t>(m.index - 1);
        record(rules[ki][idx], key_of(module_roles[idx], prompt), step.text,
               tpl.model_names[ki] + " as " + node.name);
        ModuleTrace mt{m, k, prompt, step.text, node.extractor.apply(step.text)};
        outputs[static_cast<std::size_t>(m.index)] = mt.output;
        trace.per_module.push_back(std::move(mt));
      }
      trace.final_output = outputs[static_cast<std::size_t>(graph.output_module().index)];
      const bool final_ok = normalize_answer(trace.final_output) == normalize_answer(task.answer);
      if (final_ok != (spec.end_to_end(f, z) == 1)) {
        infeasible("realization of task " + task.id + " under " + f.label() + " disagrees with the universe spec");
      }
      for (const auto& node : graph.modules()) {
        const auto j = node.id;
        const auto idx = static_cast<std::size_t>(j.index - 1);
        const auto prompt = render_diagnoser_prompt(graph, trace, task, j);
        record(judge_rules[idx], key_of(judge_roles[idx], prompt),
               judge_text(j.index, node.name, final_ok, own[static_cast<std::size_t>(j.index)] == 1),
               std::string(kJudgeName));
      }
    }
  }

  GeneratedUniverse u;
  u.name = tpl.name;
  u.system = std::move(graph);
  u.tasks = std::move(tasks);
  u.spec = spec;
  for (std::size_t k = 0; k < K; ++k) {
    SimulatedModelSpec m;
    m.name = tpl.model_names[k];
    for (std::size_t i = 0; i < L; ++i) {
      auto r = module_roles[i];
      r.responses = std::move(rules[k][i]);
      m.roles.push_back(std::move(r));
    }
    u.models.push_back(std::move(m));
  }
  u.judge.name = std::string(kJudgeName);
  u.judge.default_response = "I cannot tell which module caused the mistake.";
  for (std::size_t i = 0; i < L; ++i) {
    auto r = judge_roles[i];
    r.responses = std::move(judge_rules[i]);
    u.judge.roles.push_back(std::move(r));
  }

  std::size_t best = 0;
  bool have = false;
  for (std::size_t fi = 0; fi < *space; ++fi) {
    const auto f = allocation_from_index(fi, L, K);
    std::size_t correct = 0;
    for (std::size_t z = 0; z < n; ++z) correct += static_cast<std::size_t>(spec.end_to_end(f, z));
    if (!have || correct > best) {
      best = correct;
      u.planted_optimum = f;
      have = true;
    }
  }
  u.planted_correct = best;

  if (tpl.require_unique_optima) {
    const auto table_view = PerfTable::expand(spec);
    for (std::size_t z = 0; z < n; ++z) {
      if (!check_unique_optimum(table_view, z).unique) infeasible("task " + u.tasks[z].id + " has tied optima");
    }
  }
  return u;
}

// --- templates -----------------------------------------------------------------

namespace {

std::vector<std::string> replica_models() {
  return {"sim-gpt-4o", "sim-gpt-4o-mini", "sim-claude", "sim-gemini", "sim-llama"};
}

/// `count` distinct task indices, seeded by `name`.
std::vector<bool> subset(std::size_t n, std::size_t count, std::uint64_t seed, std::string_view name) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, name));
  rng.shuffle(idx);
  std::vector<bool> out(n, false);
  for (std::size_t i = 0; i < std::min(count, n); ++i) out[idx[i]] = true;
  return out;
}

UniverseTemplate table_template(std::string name, std::uint64_t seed) {
  UniverseTemplate t;
  t.name = std::move(name);
  t.realization = Realization::TableArithmetic;
  t.model_names = replica_models();
  TableArithmeticConfig cfg;
  cfg.seed = seed;
  t.tables = table_arithmetic_tables(cfg);
  t.spec = UniverseSpec(2, 5, t.tables.size());
  return t;
}

long long target_x(const TableTask& t) { return t.values[t.target_position()]; }

}  // namespace

UniverseTemplate case_study_template(std::uint64_t seed) {
  auto t = table_template("case-study", seed);
  const std::size_t n = t.tables.size();
  const auto gpt4o = subset(n, n / 5, seed, "sim-gpt-4o");
  const auto mini = subset(n, n / 10, seed, "sim-gpt-4o-mini");
  const auto gemini = subset(n, (3 * n) / 10, seed, "sim-gemini");
  const ModuleId locate{1}, solve{2};
  for (std::size_t z = 0; z < n; ++z) {
    const long long x = target_x(t.tables[z]);
    t.spec.set(locate, ModelId{1}, z, gpt4o[z]);
    t.spec.set(locate, ModelId{2}, z, mini[z]);
    t.spec.set(locate, ModelId{3}, z, 1);
    t.spec.set(locate, ModelId{4}, z, gemini[z]);
    t.spec.set(locate, ModelId{5}, z, x % 5 >= 2);
    t.spec.set(solve, ModelId{4}, z, 1);
    t.spec.set(solve, ModelId{5}, z, x % 5 < 2);
  }
  return t;
}

UniverseTemplate greedy_trap_template(std::uint64_t seed) {
  auto t = table_template("greedy-trap", seed);
  const ModuleId locate{1}, solve{2};
  for (std::size_t z = 0; z < t.tables.size(); ++z) {
    const long long r = target_x(t.tables[z]) % 5;
    t.spec.set(locate, ModelId{1}, z, r == 1);
    t.spec.set(locate, ModelId{2}, z, r == 0);
    t.spec.set(solve, ModelId{2}, z, r == 0);
    t.spec.set(locate, ModelId{3}, z, 1);
    t.spec.set(locate, ModelId{4}, z, r >= 3);
    t.spec.set(solve, ModelId{4}, z, 1);
    t.spec.set(locate, ModelId{5}, z, r == 2);
    t.spec.set(solve, ModelId{5}, z, r < 2);
  }
  return t;
}

UniverseTemplate self_refine_trap_template(std::size_t tasks, std::uint64_t seed) {
  UniverseTemplate t;
  t.name = "self-refine-trap";
  t.wiring = "self-refine";
  t.model_names = {"sim-alpha", "sim-beta", "sim-gamma"};
  for (std::size_t z = 0; z < tasks; ++z) t.task_ids.push_back("sr-" + std::to_string(z + 1));
  t.spec = UniverseSpec(3, 3, tasks);
  const auto easy = subset(tasks, (3 * tasks) / 10, seed, "easy");
  for (std::size_t z = 0; z < tasks; ++z) {
    for (int i = 1; i <= 3; ++i) t.spec.set(ModuleId{i}, ModelId{1}, z, easy[z]);
    t.spec.set(ModuleId{1}, ModelId{2}, z, 1);
    t.spec.set(ModuleId{3}, ModelId{2}, z, 1);
    t.spec.set(ModuleId{2}, ModelId{3}, z, 1);
  }
  return t;
}

UniverseTemplate random_template(std::size_t modules, std::size_t models, std::size_t tasks, std::uint64_t seed,
                                 const RandomUniverseOptions& options) {
  UniverseTemplate t;
  t.name = "random-" + std::to_string(seed);
  t.wiring = options.wiring;
  for (std::size_t k = 1; k <= models; ++k) t.model_names.push_back("sim-m" + std::to_string(k));
  for (std::size_t z = 0; z < tasks; ++z) t.task_ids.push_back("q" + std::to_string(z + 1));
  t.spec = UniverseSpec(modules, models, tasks);
  t.require_unique_optima = options.unique_optima;
  Rng rng(derive_seed(seed, "universe"));
  for (std::size_t i = 1; i <= modules; ++i) {
    const ModuleId m{static_cast<int>(i)};
    const auto favourite = static_cast<int>(rng.below(models)) + 1;
    for (std::size_t z = 0; z < tasks; ++z) {
      if (options.unique_optima) {
        const int c = rng.chance(options.favourite_bias) ? favourite : static_cast<int>(rng.below(models)) + 1;
        t.spec.set(m, ModelId{c}, z, 1);
      } else {
        for (std::size_t k = 1; k <= models; ++k) t.spec.set(m, ModelId{static_cast<int>(k)}, z, rng.chance(0.5));
      }
    }
  }
  return t;
}

UniverseTemplate all_perfect_template(std::size_t modules, std::size_t models, std::size_t tasks) {
  auto t = random_template(modules, models, tasks, 0, {false, 0.0, "chain"});
  t.name = "all-perfect";
  for (std::size_t i = 1; i <= modules; ++i) {
    for (std::size_t k = 1; k <= models; ++k) {
      for (std::size_t z = 0; z < tasks; ++z) t.spec.set(ModuleId{static_cast<int>(i)}, ModelId{static_cast<int>(k)}, z, 1);
    }
  }
  return t;
}

std::vector<std::string> universe_template_names() {
  return {"case-study", "greedy-trap", "self-refine-trap", "random"};
}

UniverseTemplate universe_template(std::string_view name, std::uint64_t seed) {
  if (name == "case-study") return case_study_template(seed);
  if (name == "greedy-trap") return greedy_trap_template(seed);
  if (name == "self-refine-trap") return self_refine_trap_template(20, seed);
  if (name == "random") return random_template(3, 4, 20, seed);
  throw Error(ErrorCode::UnknownBenchmark, "no universe template named '" + std::string(name) + "'");
}

// --- fixtures ------------------------------------------------------------------

ModelPool make_pool(const GeneratedUniverse& u, std::shared_ptr<ResponseCache> cache) {
  std::vector<ModelEntry> entries;
  for (const auto& m : u.models) {
    ModelEntry e;
    e.name = m.name;
    e.backend = std::make_shared<SimulatedBackend>(m);
    entries.push_back(std::move(e));
  }
  ModelEntry judge;
  judge.name = u.judge.name;
  judge.backend = std::make_shared<SimulatedBackend>(u.judge);
  judge.candidate = false;
  entries.push_back(std::move(judge));
  return ModelPool(std::move(entries), std::move(cache), u.name, std::string(kJudgeName));
}

namespace {

ordered_json model_json(const SimulatedModelSpec& spec, bool candidate) {
  const auto parsed = json::parse(dump_simulated_spec(spec));
  ordered_json out;
  out["name"] = spec.name;
  out["backend"] = "simulated";
  out["temperature"] = 0.1;
  out["max_tokens"] = 1000;
  if (!candidate) out["candidate"] = false;
  out["default_response"] = spec.default_response;
  out["roles"] = parsed.at("roles");
  return out;
}

ordered_json named_allocation(const GeneratedUniverse& u, const Allocation& f) {
  ordered_json out = ordered_json::object();
  for (const auto& node : u.system.modules()) out[node.name] = u.models[static_cast<std::size_t>(f.at(node.id).index - 1)].name;
  return out;
}

}  // namespace

std::string universe_fixture_json(const GeneratedUniverse& u) {
  ordered_json doc;
  doc["name"] = u.name;
  doc["judge"] = std::string(kJudgeName);
  doc["models"] = ordered_json::array();
  for (const auto& m : u.models) doc["models"].push_back(model_json(m, true));
  doc["models"].push_back(model_json(u.judge, false));

  ordered_json per_module = ordered_json::array();
  for (std::size_t i = 1; i <= u.spec.modules(); ++i) {
    ordered_json by_model = ordered_json::array();
    for (std::size_t k = 1; k <= u.spec.models(); ++k) {
      ordered_json row = ordered_json::array();
      for (std::size_t z = 0; z < u.spec.tasks(); ++z) {
        row.push_back(u.spec.p(ModuleId{static_cast<int>(i)}, ModelId{static_cast<int>(k)}, z));
      }
      by_model.push_back(std::move(row));
    }
    per_module.push_back(std::move(by_model));
  }
  ordered_json task_ids = ordered_json::array();
  for (const auto& t : u.tasks) task_ids.push_back(t.id);
  doc["universe"] = {{"system", u.system.name()},
                     {"modules", u.spec.modules()},
                     {"models", u.spec.models()},
                     {"tasks", u.spec.tasks()},
                     {"model_names", u.model_names()},
                     {"task_ids", task_ids},
                     {"per_module", per_module},
                     {"planted_optimum", named_allocation(u, u.planted_optimum)}};
  return doc.dump(1) + "\n";
}

std::string optimum_json(const GeneratedUniverse& u) {
  ordered_json doc{{"universe", u.name},
                   {"planted_optimum", named_allocation(u, u.planted_optimum)},
                   {"correct", u.planted_correct},
                   {"tasks", u.tasks.size()}};
  return doc.dump(2) + "\n";
}

PerfTable parse_perf_table(std::string_view text, std::size_t cap) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("universe file is not valid JSON: ") + err.what());
  }
  try {
    if (doc.contains("universe")) {
      const auto& u = doc.at("universe");
      UniverseSpec spec(u.at("modules").get<std::size_t>(), u.at("models").get<std::size_t>(),
                        u.at("tasks").get<std::size_t>());
      const auto& pm = u.at("per_module");
      for (std::size_t i = 0; i < spec.modules(); ++i) {
        for (std::size_t k = 0; k < spec.models(); ++k) {
          for (std::size_t z = 0; z < spec.tasks(); ++z) {
            spec.set(ModuleId{static_cast<int>(i + 1)}, ModelId{static_cast<int>(k + 1)}, z,
                     pm.at(i).at(k).at(z).get<int>());
          }
        }
      }
      return PerfTable::expand(spec, cap);
    }
    const auto& p = doc.at("perf");
    PerfTable t(p.at("modules").get<std::size_t>(), p.at("models").get<std::size_t>(),
                p.at("tasks").get<std::size_t>(), cap);
    const auto& pa = p.at("per_allocation");
    for (std::size_t i = 0; i < t.modules(); ++i) {
      for (std::size_t fi = 0; fi < t.allocations(); ++fi) {
        const auto f = allocation_from_index(fi, t.modules(), t.models());
        for (std::size_t z = 0; z < t.tasks(); ++z) {
          t.set(ModuleId{static_cast<int>(i + 1)}, f, z, pa.at(i).at(fi).at(z).get<int>());
        }
      }
    }
    return t;
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("malformed universe file: ") + err.what());
  }
}

std::string perf_table_json(const PerfTable& t) {
  ordered_json pa = ordered_json::array();
  for (std::size_t i = 1; i <= t.modules(); ++i) {
    ordered_json by_f = ordered_json::array();
    for (std::size_t fi = 0; fi < t.allocations(); ++fi) {
      const auto f = allocation_from_index(fi, t.modules(), t.models());
      ordered_json row = ordered_json::array();
      for (std::size_t z = 0; z < t.tasks(); ++z) row.push_back(t.p(ModuleId{static_cast<int>(i)}, f, z));
      by_f.push_back(std::move(row));
    }
    pa.push_back(std::move(by_f));
  }
  ordered_json doc;
  doc["perf"] = {{"modules", t.modules()}, {"models", t.models()}, {"tasks", t.tasks()}, {"per_allocation", pa}};
  return doc.dump() + "\n";
}

}  // namespace modsel
