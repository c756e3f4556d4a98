#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modsel/diagnoser.hpp"

namespace modsel {

/// Budget in allocation evaluations: one unit is one candidate allocation
/// run over the whole training set.
class CostLedger {
 public:
  explicit CostLedger(std::size_t budget) : budget_(budget) {}
  std::size_t spent() const { return spent_; }
  std::size_t budget() const { return budget_; }
  bool affordable(std::size_t units) const { return spent_ + units <= budget_; }
  /// Throws BudgetExhausted instead of overspending.
  void charge(std::size_t units);

 private:
  std::size_t budget_;
  std::size_t spent_ = 0;
};

struct HistoryEntry {
  std::size_t iteration = 0;
  std::size_t cost = 0;  // ledger after this step
  Allocation allocation;
  double train_accuracy = 0.0;
};

struct OptimizerReport {
  std::string optimizer;
  Allocation best_allocation;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
  std::size_t allocations_evaluated = 0;
  /// Ledger value at the first step whose allocation equals best_allocation.
  std::size_t allocations_to_best = 0;
  std::size_t iterations = 0;
  bool converged = false;
  bool budget_exhausted = false;
  std::vector<HistoryEntry> history;
  std::vector<DiagnosisReport> diagnoses;  // selector only, when requested
  std::size_t judge_calls = 0;
};

struct SearchOptions {
  std::uint64_t seed = 0;
  std::optional<Allocation> start;  // overrides the seeded f_0
  std::size_t workers = 1;
  std::size_t enumeration_cap = 10000;
  std::vector<Task> eval_tasks;  // scored once at the end, if any
  bool record_diagnoses = false;
};

/// Most frequent allocation; ties go to the lexicographically smallest.
Allocation mode_aggregate(std::span<const Allocation> allocations);

/// Seeded uniform draw over `models`^L.
Allocation initial_allocation(std::size_t modules, std::span<const ModelId> models, std::uint64_t seed);

OptimizerReport llmselector(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> models,
                            std::span<const Task> train, std::size_t budget, const DiagnoserConfig& diagnoser,
                            const SearchOptions& options = {});

OptimizerReport greedy_search(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> models,
                              std::span<const Task> train, std::size_t budget, const SearchOptions& options = {});

OptimizerReport random_search(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> models,
                              std::span<const Task> train, std::size_t budget, const SearchOptions& options = {});

OptimizerReport exhaustive_search(const SystemGraph& graph, ModelPool& pool, std::span<const ModelId> models,
                                  std::span<const Task> train, const SearchOptions& options = {});

/// Best train accuracy reached so far at each ledger value: "cost,allocation,accuracy,best".
std::string curve_csv(const OptimizerReport& report);

}  // namespace modsel
