#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "modsel/error.hpp"

namespace modsel {

/// 1-based position of a module within its system. Module L is the output module.
struct ModuleId {
  int index = 0;
  auto operator<=>(const ModuleId&) const = default;
};

/// 1-based position of a model within its pool.
struct ModelId {
  int index = 0;
  auto operator<=>(const ModelId&) const = default;
};

/// Declarative post-processing merged into a module, applied to the raw
/// completion before it leaves the module.
struct Extractor {
  enum class Kind { Identity, Trim, LastLine, Regex };
  Kind kind = Kind::Identity;
  std::string pattern;  // Regex only; the first capture group is kept

  std::string apply(std::string_view text) const;
  bool operator==(const Extractor&) const = default;
};

struct InputSource {
  static InputSource query() { return {}; }
  static InputSource from(ModuleId id) { return {id}; }

  std::optional<ModuleId> module;  // empty means the user query
  bool is_query() const { return !module.has_value(); }
  bool operator==(const InputSource&) const = default;
};

struct ModuleNode {
  ModuleId id;
  std::string name;
  std::string prompt_template;
  std::vector<InputSource> inputs;
  Extractor extractor;
  std::string description;

  bool operator==(const ModuleNode&) const = default;
};

using Edge = std::pair<ModuleId, ModuleId>;

/// Static compound system: a DAG of LLM modules. Immutable once built.
/// Construction does not validate; call validate() or use load_system().
class SystemGraph {
 public:
  SystemGraph() = default;
  /// Edges are derived from the declared inputs.
  SystemGraph(std::string name, std::vector<ModuleNode> modules);
  /// Explicit edge list, checked against the inputs by validate().
  SystemGraph(std::string name, std::vector<ModuleNode> modules, std::vector<Edge> edges);

  const std::string& name() const { return name_; }
  std::size_t size() const { return modules_.size(); }
  std::span<const ModuleNode> modules() const { return modules_; }
  std::span<const Edge> edges() const { return edges_; }
  const ModuleNode& module(ModuleId id) const;
  std::optional<ModuleId> find(std::string_view module_name) const;
  ModuleId output_module() const { return ModuleId{static_cast<int>(modules_.size())}; }

  bool operator==(const SystemGraph&) const = default;

 private:
  std::string name_;
  std::vector<ModuleNode> modules_;
  std::vector<Edge> edges_;
};

struct GraphError {
  ErrorCode code;
  std::string message;
  std::optional<ModuleId> module;
  std::optional<Edge> edge;
};

/// Empty result means every graph invariant holds. Otherwise the first
/// violation found, checked in the order: names, edges, placeholders, cycles,
/// output module.
std::optional<GraphError> validate(const SystemGraph& graph);

/// Kahn order with ties broken by ascending module index.
/// Precondition: the graph validates.
std::vector<ModuleId> topological_order(const SystemGraph& graph);

/// Placeholder parsing for `{query}`, `{module:<name>}`; `{{` and `}}` are
/// literal braces.
struct Placeholder {
  std::optional<std::string> module_name;  // empty for {query}
  bool operator==(const Placeholder&) const = default;
};
std::vector<Placeholder> parse_placeholders(std::string_view prompt_template);

/// Binds every placeholder. `module_output` is called with the referenced
/// module name.
template <typename QueryFn, typename ModuleFn>
std::string render_template(std::string_view prompt_template, QueryFn&& query, ModuleFn&& module_output);

/// Plain-text description of the wiring, used by the diagnoser.
std::string describe(const SystemGraph& graph);

SystemGraph parse_system(std::string_view json_text);
/// Parses and validates; throws Error(ConfigError) carrying the validator message.
SystemGraph load_system(const std::filesystem::path& path);
std::string dump_system(const SystemGraph& graph);

std::vector<std::string> builtin_system_names();
/// locate-solve, self-refine, multi-agent-debate.
SystemGraph builtin_system(std::string_view name);

/// Total assignment of a model to every module.
class Allocation {
 public:
  Allocation() = default;
  explicit Allocation(std::vector<ModelId> models) : models_(std::move(models)) {}

  std::size_t size() const { return models_.size(); }
  ModelId at(ModuleId module) const { return models_.at(static_cast<std::size_t>(module.index - 1)); }
  std::span<const ModelId> models() const { return models_; }
  /// e.g. "3-4" for {1:3, 2:4}
  std::string label() const;

  /// Field-wise equality; ordering is lexicographic on (module index, model index).
  auto operator<=>(const Allocation&) const = default;

 private:
  std::vector<ModelId> models_;
};

/// f_{i->k}: same as `f` except module `i` maps to `k`.
Allocation with_substitution(const Allocation& f, ModuleId i, ModelId k, std::size_t model_count);

/// Uniform allocation {1:k, ..., L:k}.
Allocation uniform_allocation(std::size_t modules, ModelId k);

/// The index-th allocation of K^L in lexicographic order (module 1 most significant).
Allocation allocation_from_index(std::size_t index, std::size_t modules, std::size_t model_count);
std::size_t allocation_index(const Allocation& f, std::size_t model_count);

/// K^L, or nullopt when it exceeds `cap`.
std::optional<std::size_t> allocation_space_size(std::size_t modules, std::size_t model_count, std::size_t cap);

// ---------------------------------------------------------------------------

template <typename QueryFn, typename ModuleFn>
std::string render_template(std::string_view tpl, QueryFn&& query, ModuleFn&& module_output) {
  std::string out;
  out.reserve(tpl.size());
  for (std::size_t pos = 0; pos < tpl.size();) {
    const char c = tpl[pos];
    if (c == '{' && pos + 1 < tpl.size() && tpl[pos + 1] == '{') {
      out.push_back('{');
      pos += 2;
    } else if (c == '}' && pos + 1 < tpl.size() && tpl[pos + 1] == '}') {
      out.push_back('}');
      pos += 2;
    } else if (c == '{') {
      const auto close = tpl.find('}', pos);
      if (close == std::string_view::npos) {
        throw Error(ErrorCode::UnboundPlaceholder, "unterminated placeholder in template");
      }
      const auto body = tpl.substr(pos + 1, close - pos - 1);
      if (body == "query") {
        out += query();
      } else if (body.starts_with("module:")) {
        out += module_output(std::string(body.substr(7)));
      } else {
        throw Error(ErrorCode::UnboundPlaceholder, "unknown placeholder {" + std::string(body) + "}");
      }
      pos = close + 1;
    } else {
      out.push_back(c);
      ++pos;
    }
  }
  return out;
}

}  // namespace modsel
