#include "modsel/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "modsel/parallel.hpp"
#include "modsel/rng.hpp"

namespace modsel {

void CostLedger::charge(std::size_t units) {
  if (!affordable(units)) {
    throw BudgetExhausted("charging " + std::to_string(units) + " units would exceed the budget of " +
                          std::to_string(budget_) + " (spent " + std::to_string(spent_) + ")");
  }
  spent_ += units;
}

Allocation mode_aggregate(std::span<const Allocation> allocations) {
  if (allocations.empty()) throw std::invalid_argument("mode of an empty list");
  std::map<Allocation, std::size_t> counts;
  for (const auto& f : allocations) ++counts[f];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

namespace {

std::vector<ModelId> sorted_models(std::span<const ModelId> models, const ModelPool& pool) {
  if (models.empty()) throw Error(ErrorCode::ConfigError, "no candidate models");
  std::vector<ModelId> out(models.begin(), models.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (auto m : out) pool.entry(m);  // throws UnknownModel
  return out;
}

Allocation map_digits(const Allocation& digits, std::span<const ModelId> models) {
  std::vector<ModelId> out;
  out.reserve(digits.size());
  for (auto d : digits.models()) out.push_back(models[static_cast<std::size_t>(d.index - 1)]);
  return Allocation(std::move(out));
}

void check_start(const Allocation& f, const SystemGraph& graph, std::span<const ModelId> models) {
  if (f.size() != graph.size()) {
    throw Error(ErrorCode::UnknownModule, "start allocation does not cover " + graph.name());
  }
  for (auto m : f.models()) {
    if (!std::binary_search(models.begin(), models.end(), m)) {
      throw Error(ErrorCode::UnknownModel, "start allocation uses a model outside the candidate set");
    }
  }
}

double train_mean(const SystemGraph& graph, const Allocation& f, std::span<const Task> train, ModelPool& pool,
                  const SearchOptions& options) {
  HarnessOptions h;
  h.workers = options.workers;
  return evaluate_allocation(graph, f, train, pool, h).mean;
}

void finish(OptimizerReport& report, const SystemGraph& graph, ModelPool& pool, const SearchOptions& options) {
  for (const auto& h : report.history) {
    if (h.allocation == report.best_allocation) {
      report.allocations_to_best = h.cost;
      break;
    }
  }
  if (!options.eval_tasks.empty()) {
    try {
      report.eval_accuracy = train_mean(graph, report.best_allocation, options.eval_tasks, pool, options);
    } catch (const BudgetExhausted&) {
      report.budget_exhausted = true;
    }
  }
}

/// Shared skeleton of the selector and greedy: nominate j, apply `step`,
/// charge K, and stop once the last L+1 aggregates agree.
template <typename Step>
void coordinate_loop(OptimizerReport& report, const SystemGraph& graph, std::size_t model_count,
                     std::size_t budget, const Allocation& f0, double f0_accuracy, Step&& step) {
  const std::size_t L = graph.size();
  CostLedger ledger(budget);
  std::vector<Allocation> aggregated{f0};
  report.history.push_back({0, 0, f0, f0_accuracy});
  report.best_allocation = f0;
  report.train_accuracy = f0_accuracy;
  bool stop = false;
  std::size_t i = 1;
  while (ledger.affordable(model_count) && !stop) {
    const ModuleId j{static_cast<int>(i % L) + 1};
    std::pair<Allocation, double> next;
    try {
      next = step(j);
    } catch (const BudgetExhausted&) {
      report.budget_exhausted = true;
      break;
    }
    ledger.charge(model_count);
    aggregated.push_back(next.first);
    report.history.push_back({i, ledger.spent(), next.first, next.second});
    report.best_allocation = next.first;
    report.train_accuracy = next.second;
    report.iterations = i;
    if (i > L) {
      stop = std::all_of(aggregated.end() - static_cast<std::ptrdiff_t>(L + 1), aggregated.end(),
                         [&](const Allocation& f) { return f == next.first; });
    }
    ++i;
  }
  report.converged = stop;
  report.allocations_evaluated = ledger.spent();
}

}  // namespace

Allocation initial_allocation(std::size_t modules, std::span<const ModelId> models, std::uint64_t seed) {
  if (models.empty()) throw Error(ErrorCode::ConfigError, "no candidate models");
  Rng rng(derive_seed(seed, "init"));
  std::vector<ModelId> out;
  for (std::size_t i = 0; i < modules; ++i) out.push_back(models[rng.below(models.size())]);
  return Allocation(std::move(out));
}

OptimizerReport llmselector(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> candidate_models,
                            std::span<const Task> train, std::size_t budget, const DiagnoserConfig& diagnoser,
                            const SearchOptions& options) {
  const auto models = sorted_models(candidate_models, pool);
  if (train.empty()) throw Error(ErrorCode::ConfigError, "empty training set");
  if (budget < models.size()) {
    throw Error(ErrorCode::ConfigError, "budget " + std::to_string(budget) + " is below one iteration (" +
                                            std::to_string(models.size()) + " allocations)");
  }
  const Allocation f0 = options.start ? *options.start : initial_allocation(graph.size(), models, options.seed);
  check_start(f0, graph, models);

  OptimizerReport report;
  report.optimizer = "llmselector";
  std::vector<Allocation> per_task(train.size(), f0);
  std::atomic<std::size_t> judge_calls{0};

  double f0_accuracy = 0.0;
  try {
    f0_accuracy = train_mean(graph, f0, train, pool, options);
  } catch (const BudgetExhausted&) {
    report.budget_exhausted = true;
    report.best_allocation = f0;
    report.history.push_back({0, 0, f0, 0.0});
    return report;
  }

  coordinate_loop(report, graph, models.size(), budget, f0, f0_accuracy, [&](ModuleId j) {
    std::vector<Allocation> next(per_task.size());
    std::vector<std::vector<DiagnosisReport>> notes(per_task.size());
    parallel_for(per_task.size(), options.workers, [&](std::size_t z) {
      double best = -std::numeric_limits<double>::infinity();
      ModelId arg = models.front();
      for (auto k : models) {
        const auto g = with_substitution(per_task[z], j, k, pool.size());
        auto rep = module_score(graph, g, train[z], j, diagnoser, pool);
        if (rep.judged) ++judge_calls;
        if (rep.combined_score > best) {
          best = rep.combined_score;
          arg = k;
        }
        if (options.record_diagnoses) notes[z].push_back(std::move(rep));
      }
      next[z] = with_substitution(per_task[z], j, arg, pool.size());
    });
    const auto f_i = mode_aggregate(next);
    const double accuracy = train_mean(graph, f_i, train, pool, options);
    per_task = std::move(next);
    for (auto& n : notes) {
      for (auto& rep : n) report.diagnoses.push_back(std::move(rep));
    }
    return std::pair{f_i, accuracy};
  });
  report.judge_calls = judge_calls;
  finish(report, graph, pool, options);
  return report;
}

OptimizerReport greedy_search(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> candidate_models,
                              std::span<const Task> train, std::size_t budget, const SearchOptions& options) {
  const auto models = sorted_models(candidate_models, pool);
  if (train.empty()) throw Error(ErrorCode::ConfigError, "empty training set");
  if (budget < models.size()) {
    throw Error(ErrorCode::ConfigError, "budget " + std::to_string(budget) + " is below one iteration (" +
                                            std::to_string(models.size()) + " allocations)");
  }
  const Allocation f0 = options.start ? *options.start : initial_allocation(graph.size(), models, options.seed);
  check_start(f0, graph, models);

  OptimizerReport report;
  report.optimizer = "greedy";
  double f0_accuracy = 0.0;
  try {
    f0_accuracy = train_mean(graph, f0, train, pool, options);
  } catch (const BudgetExhausted&) {
    report.budget_exhausted = true;
    report.best_allocation = f0;
    report.history.push_back({0, 0, f0, 0.0});
    return report;
  }
  Allocation current = f0;
  coordinate_loop(report, graph, models.size(), budget, f0, f0_accuracy, [&](ModuleId j) {
    double best = -1.0;
    Allocation arg;
    for (auto k : models) {
      auto g = with_substitution(current, j, k, pool.size());
      const double acc = train_mean(graph, g, train, pool, options);
      if (acc > best) {
        best = acc;
        arg = std::move(g);
      }
    }
    current = arg;
    return std::pair{arg, best};
  });
  finish(report, graph, pool, options);
  return report;
}

OptimizerReport random_search(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> candidate_models,
                              std::span<const Task> train, std::size_t budget, const SearchOptions& options) {
  const auto models = sorted_models(candidate_models, pool);
  if (train.empty()) throw Error(ErrorCode::ConfigError, "empty training set");
  if (budget < 1) throw Error(ErrorCode::ConfigError, "random search needs a budget of at least 1");
  const std::size_t L = graph.size();
  const std::size_t K = models.size();
  Rng rng(derive_seed(options.seed, "sample"));

  std::vector<Allocation> sample;
  constexpr std::size_t kIndexable = std::size_t{1} << 20;
  if (const auto space = allocation_space_size(L, K, kIndexable)) {
    const std::size_t n = std::min(budget, *space);
    std::vector<std::size_t> idx(*space);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // partial Fisher-Yates: the first n slots are a uniform sample
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    for (std::size_t i = 0; i < n; ++i) sample.push_back(map_digits(allocation_from_index(idx[i], L, K), models));
  } else {
    std::set<Allocation> seen;
    while (sample.size() < budget) {
      std::vector<ModelId> m;
      for (std::size_t i = 0; i < L; ++i) m.push_back(models[rng.below(K)]);
      Allocation f(std::move(m));
      if (seen.insert(f).second) sample.push_back(std::move(f));
    }
  }

  OptimizerReport report;
  report.optimizer = "random";
  bool have = false;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    double acc = 0.0;
    try {
      acc = train_mean(graph, sample[i], train, pool, options);
    } catch (const BudgetExhausted&) {
      report.budget_exhausted = true;
      break;
    }
    report.history.push_back({i + 1, i + 1, sample[i], acc});
    report.allocations_evaluated = i + 1;
    report.iterations = i + 1;
    if (!have || acc > report.train_accuracy ||
        (acc == report.train_accuracy && sample[i] < report.best_allocation)) {
      report.best_allocation = sample[i];
      report.train_accuracy = acc;
      have = true;
    }
  }
  if (!have) report.best_allocation = sample.front();
  finish(report, graph, pool, options);
  return report;
}

OptimizerReport exhaustive_search(const SystemGraph& graph, ModelPool& pool,
                                  std::span<const ModelId> candidate_models, std::span<const Task> train,
                                  const SearchOptions& options) {
  const auto models = sorted_models(candidate_models, pool);
  if (train.empty()) throw Error(ErrorCode::ConfigError, "empty training set");
  const std::size_t L = graph.size();
  const std::size_t K = models.size();
  const auto space = allocation_space_size(L, K, options.enumeration_cap);
  if (!space) {
    throw Error(ErrorCode::EnumerationTooLarge, std::to_string(K) + "^" + std::to_string(L) +
                                                    " allocations exceed the enumeration cap of " +
                                                    std::to_string(options.enumeration_cap));
  }
  OptimizerReport report;
  report.optimizer = "exhaustive";
  for (std::size_t i = 0; i < *space; ++i) {
    const auto f = map_digits(allocation_from_index(i, L, K), models);
    double acc = 0.0;
    try {
      acc = train_mean(graph, f, train, pool, options);
    } catch (const BudgetExhausted&) {
      report.budget_exhausted = true;
      break;
    }
    report.history.push_back({i + 1, i + 1, f, acc});
    report.allocations_evaluated = i + 1;
    report.iterations = i + 1;
    if (i == 0 || acc > report.train_accuracy) {
      report.best_allocation = f;
      report.train_accuracy = acc;
    }
  }
  if (report.history.empty()) report.best_allocation = map_digits(allocation_from_index(0, L, K), models);
  finish(report, graph, pool, options);
  return report;
}

std::string curve_csv(const OptimizerReport& report) {
  std::ostringstream out;
  out << "cost,allocation,train_accuracy,best_train_accuracy\n";
  double best = -1.0;
  for (const auto& h : report.history) {
    best = std::max(best, h.train_accuracy);
    out << h.cost << ',' << h.allocation.label() << ',' << h.train_accuracy << ',' << best << '\n';
  }
  return out.str();
}

}  // namespace modsel
