#include "modsel/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "modsel/parallel.hpp"
#include "modsel/rng.hpp"

namespace modsel {

using nlohmann::json;
using nlohmann::ordered_json;

DatasetSplit split_dataset(std::span<const Task> tasks, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "split fraction must lie in (0, 1)");
  }
  const std::size_t n = tasks.size();
  auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? split.train : split.eval).push_back(tasks[i]);
  return split;
}

std::vector<Task> parse_dataset(std::string_view text) {
  std::vector<Task> tasks;
  std::set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = json::parse(line);
      Task t{rec.at("id").get<std::string>(), rec.at("question").get<std::string>(),
             rec.at("answer").get<std::string>()};
      if (t.answer.empty()) throw Error(ErrorCode::ConfigError, "task " + t.id + " has an empty answer");
      if (!ids.insert(t.id).second) throw Error(ErrorCode::ConfigError, "duplicate task id " + t.id);
      tasks.push_back(std::move(t));
    } catch (const json::exception& err) {
      throw Error(ErrorCode::ConfigError, "dataset line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return tasks;
}

std::string dump_dataset(std::span<const Task> tasks) {
  std::string out;
  for (const auto& t : tasks) {
    out += ordered_json{{"id", t.id}, {"question", t.question}, {"answer", t.answer}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<Task> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open dataset " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

void write_dataset(const std::filesystem::path& path, std::span<const Task> tasks) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << dump_dataset(tasks);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
}

const ModuleTrace& Trace::of(ModuleId module) const {
  for (const auto& m : per_module) {
    if (m.module == module) return m;
  }
  throw Error(ErrorCode::UnknownModule, "module " + std::to_string(module.index) + " is not in the trace");
}

Trace execute(const SystemGraph& graph, const Allocation& f, const Task& task, ModelPool& pool) {
  if (f.size() != graph.size()) {
    throw Error(ErrorCode::UnknownModule, "allocation covers " + std::to_string(f.size()) + " modules but " +
                                              graph.name() + " has " + std::to_string(graph.size()));
  }
  Trace trace;
  trace.task_id = task.id;
  trace.allocation = f;
  trace.per_module.reserve(graph.size());
  std::vector<const std::string*> outputs(graph.size() + 1, nullptr);

  for (const auto module : topological_order(graph)) {
    const auto& node = graph.module(module);
    const auto prompt = render_template(
        node.prompt_template, [&]() -> const std::string& { return task.question; },
        [&](const std::string& name) -> const std::string& {
          return *outputs[static_cast<std::size_t>(graph.find(name)->index)];
        });
    ModuleTrace step{module, f.at(module), prompt, {}, {}};
    try {
      step.raw_output = pool.complete(pool.request(step.model, prompt)).text;
    } catch (const ExecutionError&) {
      throw;
    } catch (const EndpointError& err) {
      throw ExecutionError(err, trace);
    }
    step.output = node.extractor.apply(step.raw_output);
    trace.per_module.push_back(std::move(step));
    outputs[static_cast<std::size_t>(module.index)] = &trace.per_module.back().output;
  }
  trace.final_output = trace.of(graph.output_module()).output;
  return trace;
}

std::string normalize_answer(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n\v\f");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n\v\f");
  std::string out(text.substr(first, last - first + 1));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

int end_to_end_perf(const Trace& trace, const Task& task) {
  return normalize_answer(trace.final_output) == normalize_answer(task.answer) ? 1 : 0;
}

Evaluation evaluate_allocation(const SystemGraph& graph, const Allocation& f, std::span<const Task> tasks,
                               ModelPool& pool, const HarnessOptions& options) {
  if (tasks.empty()) throw Error(ErrorCode::ConfigError, "cannot evaluate an allocation on zero tasks");
  std::vector<Trace> traces(tasks.size());
  parallel_for(tasks.size(), options.workers, [&](std::size_t i) { traces[i] = execute(graph, f, tasks[i], pool); });
  Evaluation ev;
  ev.records.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const int score = end_to_end_perf(traces[i], tasks[i]);
    ev.correct += static_cast<std::size_t>(score);
    ev.records.push_back({tasks[i].id, f, score});
  }
  ev.mean = static_cast<double>(ev.correct) / static_cast<double>(tasks.size());
  if (options.keep_traces) ev.traces = std::move(traces);
  return ev;
}

std::string allocation_json(const SystemGraph& graph, const Allocation& f, const ModelPool& pool) {
  ordered_json out = ordered_json::object();
  for (const auto& node : graph.modules()) out[node.name] = pool.model_name(f.at(node.id));
  return out.dump();
}

Allocation parse_allocation(std::string_view text, const SystemGraph& graph, const ModelPool& pool) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  std::vector<ModelId> models(graph.size());
  std::vector<bool> set(graph.size(), false);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    std::size_t slot = i;
    std::string model = parts[i];
    if (eq != std::string::npos) {
      const auto module = graph.find(parts[i].substr(0, eq));
      if (!module) throw Error(ErrorCode::UnknownModule, "no module named '" + parts[i].substr(0, eq) + "'");
      slot = static_cast<std::size_t>(module->index - 1);
      model = parts[i].substr(eq + 1);
    }
    if (slot >= graph.size()) throw Error(ErrorCode::UnknownModule, "allocation lists too many modules");
    models[slot] = pool.id(model);
    set[slot] = true;
  }
  if (std::find(set.begin(), set.end(), false) != set.end()) {
    throw Error(ErrorCode::UnknownModule, "allocation '" + std::string(text) + "' does not cover every module");
  }
  return Allocation(std::move(models));
}

std::string trace_json(const Trace& trace, const Task& task, const SystemGraph& graph, const ModelPool& pool) {
  ordered_json modules = ordered_json::array();
  for (const auto& m : trace.per_module) {
    modules.push_back({{"module", m.module.index},
                       {"name", graph.module(m.module).name},
                       {"model", pool.model_name(m.model)},
                       {"prompt", m.rendered_prompt},
                       {"raw_output", m.raw_output},
                       {"output", m.output}});
  }
  const ordered_json doc{{"task_id", trace.task_id},
                         {"allocation", ordered_json::parse(allocation_json(graph, trace.allocation, pool))},
                         {"modules", modules},
                         {"final_output", trace.final_output},
                         {"answer", task.answer},
                         {"score", end_to_end_perf(trace, task)}};
  return doc.dump(2) + "\n";
}

std::filesystem::path write_trace(const std::filesystem::path& run_dir, const Trace& trace, const Task& task,
                                  const SystemGraph& graph, const ModelPool& pool) {
  std::string file = trace.task_id;
  for (auto& c : file) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  const auto dir = run_dir / "traces" / trace.allocation.label();
  std::filesystem::create_directories(dir);
  const auto path = dir / (file + ".json");
  std::ofstream out(path, std::ios::binary);
  out << trace_json(trace, task, graph, pool);
  return path;
}

}  // namespace modsel
