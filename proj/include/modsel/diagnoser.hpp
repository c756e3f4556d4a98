#pragma once

#include <string>
#include <string_view>

#include "modsel/harness.hpp"

namespace modsel {

struct DiagnoserConfig {
  ModelId judge_model;
  double gamma = 0.0;
  /// Skip the judge when the final output is already correct; the prompt
  /// itself forces 'error: 0' in that case, so scores are unchanged.
  bool short_circuit = true;
};

struct DiagnosisReport {
  std::string task_id;
  ModuleId module;
  Allocation allocation;
  std::string raw_judgment;
  int error_flag = 0;
  int estimated_perf = 1;  // 1 - error_flag
  int end_to_end = 0;
  double combined_score = 0.0;  // estimated_perf + gamma * end_to_end
  bool judged = false;          // false when short-circuited
  bool unparseable = false;
};

/// Judge prompt for module `j` of the traced execution.
std::string render_diagnoser_prompt(const SystemGraph& graph, const Trace& trace, const Task& task, ModuleId j);

/// Flag from the last "error: 0" / "error: 1" token (case-insensitive,
/// whitespace-tolerant). Throws Error(UnparseableJudgment) if neither appears.
int parse_error_flag(std::string_view raw_judgment);

/// Scores module `j` on an existing trace.
DiagnosisReport diagnose(const SystemGraph& graph, const Trace& trace, const Task& task, ModuleId j,
                         const DiagnoserConfig& config, ModelPool& pool);

/// Executes (graph, f, task) and scores module `j`: (1 - error_flag) + gamma * p(f, z).
DiagnosisReport module_score(const SystemGraph& graph, const Allocation& f, const Task& task, ModuleId j,
                             const DiagnoserConfig& config, ModelPool& pool);

}  // namespace modsel
