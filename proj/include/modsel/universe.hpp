#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modsel/synthetic.hpp"

namespace modsel {

/// Per-module performance p_i(k, z) in {0, 1}, where each module's score
/// depends only on its own model. End-to-end performance is the product.
class UniverseSpec {
 public:
  UniverseSpec() = default;
  UniverseSpec(std::size_t modules, std::size_t models, std::size_t tasks);

  std::size_t modules() const { return modules_; }
  std::size_t models() const { return models_; }
  std::size_t tasks() const { return tasks_; }

  int p(ModuleId i, ModelId k, std::size_t z) const { return perf_[slot(i, k, z)]; }
  void set(ModuleId i, ModelId k, std::size_t z, int value) { perf_[slot(i, k, z)] = value ? 1 : 0; }
  /// prod_i p_i(f(i), z)
  int end_to_end(const Allocation& f, std::size_t z) const;

  bool operator==(const UniverseSpec&) const = default;

 private:
  std::size_t slot(ModuleId i, ModelId k, std::size_t z) const;
  std::size_t modules_ = 0, models_ = 0, tasks_ = 0;
  std::vector<std::uint8_t> perf_;
};

/// General p_i(f, z) over whole allocations, for the assumption checkers.
/// Allocations use model indices 1..K.
class PerfTable {
 public:
  /// Throws EnumerationTooLarge when K^L exceeds `cap`.
  PerfTable(std::size_t modules, std::size_t models, std::size_t tasks, std::size_t cap = 10000);
  static PerfTable expand(const UniverseSpec& spec, std::size_t cap = 10000);

  std::size_t modules() const { return modules_; }
  std::size_t models() const { return models_; }
  std::size_t tasks() const { return tasks_; }
  std::size_t allocations() const { return allocations_; }

  int p(ModuleId i, const Allocation& f, std::size_t z) const;
  void set(ModuleId i, const Allocation& f, std::size_t z, int value);
  int end_to_end(const Allocation& f, std::size_t z) const;

 private:
  std::size_t slot(ModuleId i, const Allocation& f, std::size_t z) const;
  std::size_t modules_, models_, tasks_, allocations_;
  std::vector<std::uint8_t> perf_;
};

/// p_i(f_{i->k}) >= p_i(f_{i->k'}) yet p_i(f'_{i->k}) < p_i(f'_{i->k'}).
/// `f` and `f_prime` are reported with module i set to k.
struct IntraCounterexample {
  ModuleId module;
  ModelId k, k_prime;
  std::size_t task = 0;
  Allocation f, f_prime;
};

/// p_i(f_{i->k}) > p_i(f_{i->k'}) yet p_j(f'_{i->k}) < p_j(f'_{i->k'}).
struct InterCounterexample {
  ModuleId module, other;
  ModelId k, k_prime;
  std::size_t task = 0;
  Allocation f, f_prime;
};

struct OptimumCheck {
  bool unique = false;
  int best = 0;
  std::vector<Allocation> maximizers;  // lexicographic order
};

std::optional<IntraCounterexample> check_intra_monotone(const PerfTable& table);
std::optional<InterCounterexample> check_inter_monotone(const PerfTable& table);
OptimumCheck check_unique_optimum(const PerfTable& table, std::size_t task);

enum class Realization {
  /// Modules emit status lines ("<task>: <name>=ok, upstream=bad") on any wiring.
  Abstract,
  /// locate-solve over TableArithmetic tables: wrong locators pick another
  /// cell, wrong solvers answer X instead of X+1.
  TableArithmetic,
};

struct UniverseTemplate {
  std::string name;
  Realization realization = Realization::Abstract;
  std::string wiring = "chain";  // Abstract: "chain" or a built-in system whose wiring is reused
  std::vector<std::string> model_names;
  std::vector<std::string> task_ids;  // Abstract
  std::vector<TableTask> tables;      // TableArithmetic
  UniverseSpec spec;
  bool require_unique_optima = false;
};

struct GeneratedUniverse {
  std::string name;
  SystemGraph system;
  std::vector<Task> tasks;
  std::vector<SimulatedModelSpec> models;  // model k of the universe spec is models[k-1]
  SimulatedModelSpec judge;
  UniverseSpec spec;
  Allocation planted_optimum;  // brute force over the universe spec, first maximizer in lexicographic order
  std::size_t planted_correct = 0;

  std::vector<std::string> model_names() const;
};

inline constexpr std::string_view kJudgeName = "sim-judge";

/// Realizes the template through real prompts: every (allocation, task)
/// pair is executed symbolically and the resulting prompts become lookup
/// rules. Throws InfeasibleSpec if two executions need different answers to
/// the same prompt, or a requested property does not hold.
GeneratedUniverse gen_universe(const UniverseTemplate& tpl, std::uint64_t seed);

/// 5 models on locate-solve over 100 TableArithmetic tables. sim-claude
/// always locates correctly but never solves; sim-gemini always solves but
/// locates only 30 tables.
UniverseTemplate case_study_template(std::uint64_t seed);
/// Same models and tables; from {sim-gpt-4o-mini, sim-gpt-4o-mini} no single
/// module swap improves accuracy.
UniverseTemplate greedy_trap_template(std::uint64_t seed);
/// self-refine wiring, 3 models; the uniform sim-alpha allocation traps greedy.
UniverseTemplate self_refine_trap_template(std::size_t tasks, std::uint64_t seed);

struct RandomUniverseOptions {
  bool unique_optima = true;  // exactly one competent model per (module, task)
  double favourite_bias = 0.7;
  std::string wiring = "chain";
};
UniverseTemplate random_template(std::size_t modules, std::size_t models, std::size_t tasks, std::uint64_t seed,
                                 const RandomUniverseOptions& options = {});
UniverseTemplate all_perfect_template(std::size_t modules, std::size_t models, std::size_t tasks);

/// Pool with the universe's models plus the judge (not a candidate).
ModelPool make_pool(const GeneratedUniverse& u, std::shared_ptr<ResponseCache> cache = nullptr);

/// Pool config loadable by load_pool, with the universe spec embedded under "universe".
std::string universe_fixture_json(const GeneratedUniverse& u);
/// Planted optimum sidecar.
std::string optimum_json(const GeneratedUniverse& u);
/// Accepts a fixture ("universe": per-module table) or a bare general table
/// ("perf": per-allocation table).
PerfTable parse_perf_table(std::string_view json_text, std::size_t cap = 10000);
std::string perf_table_json(const PerfTable& table);

std::vector<std::string> universe_template_names();
/// By name: case-study, greedy-trap, self-refine-trap, random.
UniverseTemplate universe_template(std::string_view name, std::uint64_t seed);

}  // namespace modsel
