#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modsel/model_pool.hpp"
#include "modsel/system_graph.hpp"

namespace modsel {

/// One question-answer pair.
struct Task {
  std::string id;
  std::string question;
  std::string answer;
  bool operator==(const Task&) const = default;
};

struct DatasetSplit {
  std::vector<Task> train;
  std::vector<Task> eval;
};

/// Seeded partition; both halves keep the dataset's original order. The train
/// half holds round(n * train_fraction) tasks, clamped so neither half is
/// empty when n >= 2.
DatasetSplit split_dataset(std::span<const Task> tasks, double train_fraction, std::uint64_t seed);

/// Line-delimited JSON records {"id", "question", "answer"}.
std::vector<Task> parse_dataset(std::string_view text);
std::string dump_dataset(std::span<const Task> tasks);
std::vector<Task> load_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, std::span<const Task> tasks);

struct ModuleTrace {
  ModuleId module;
  ModelId model;
  std::string rendered_prompt;
  std::string raw_output;
  std::string output;  // after the module's extractor
};

struct Trace {
  std::string task_id;
  Allocation allocation;
  std::vector<ModuleTrace> per_module;  // topological order
  std::string final_output;

  const ModuleTrace& of(ModuleId module) const;
};

/// Raised when a model call fails mid-execution; carries what ran so far.
class ExecutionError : public EndpointError {
 public:
  ExecutionError(const EndpointError& cause, Trace partial)
      : EndpointError(cause.what(), cause.attempts()), partial_(std::move(partial)) {}
  const Trace& partial_trace() const { return partial_; }

 private:
  Trace partial_;
};

/// Runs every module once in topological order.
Trace execute(const SystemGraph& graph, const Allocation& f, const Task& task, ModelPool& pool);

/// Trim surrounding whitespace and ASCII case-fold.
std::string normalize_answer(std::string_view text);

/// Exact match after normalization; 1 or 0.
int end_to_end_perf(const Trace& trace, const Task& task);

struct PerfRecord {
  std::string task_id;
  Allocation allocation;
  int score = 0;
};

struct Evaluation {
  double mean = 0.0;
  std::size_t correct = 0;
  std::vector<PerfRecord> records;  // task order
  std::vector<Trace> traces;        // filled only when requested
};

struct HarnessOptions {
  std::size_t workers = 1;
  bool keep_traces = false;
};

/// P(f) over `tasks`. Tasks may run concurrently; results come back in task order.
Evaluation evaluate_allocation(const SystemGraph& graph, const Allocation& f, std::span<const Task> tasks,
                               ModelPool& pool, const HarnessOptions& options = {});

/// `{"locate": "sim-claude", ...}` rendering of an allocation.
std::string allocation_json(const SystemGraph& graph, const Allocation& f, const ModelPool& pool);
/// Parses "name=model,..." or "model,model,...".
Allocation parse_allocation(std::string_view text, const SystemGraph& graph, const ModelPool& pool);

std::string trace_json(const Trace& trace, const Task& task, const SystemGraph& graph, const ModelPool& pool);
/// Writes `<run_dir>/traces/<allocation label>/<task id>.json`.
std::filesystem::path write_trace(const std::filesystem::path& run_dir, const Trace& trace, const Task& task,
                                  const SystemGraph& graph, const ModelPool& pool);

}  // namespace modsel
