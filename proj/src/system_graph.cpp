#include "modsel/system_graph.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"

namespace modsel {

using nlohmann::json;

namespace {

std::string trim_copy(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

bool valid_identifier(std::string_view name) {
  if (name.empty() || name == "query") return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::vector<Edge> derive_edges(std::span<const ModuleNode> modules) {
  std::set<Edge> edges;
  for (const auto& node : modules) {
    for (const auto& in : node.inputs) {
      if (in.module) edges.insert({*in.module, node.id});
    }
  }
  return {edges.begin(), edges.end()};
}

std::string module_ref(const SystemGraph& g, ModuleId id) {
  std::string out = "module " + std::to_string(id.index);
  if (id.index >= 1 && static_cast<std::size_t>(id.index) <= g.size()) {
    out += " (" + g.module(id).name + ")";
  }
  return out;
}

}  // namespace

std::string Extractor::apply(std::string_view text) const {
  switch (kind) {
    case Kind::Identity:
      return std::string(text);
    case Kind::Trim:
      return trim_copy(text);
    case Kind::LastLine: {
      const auto trimmed = trim_copy(text);
      const auto nl = trimmed.find_last_of('\n');
      return nl == std::string::npos ? trimmed : trim_copy(std::string_view(trimmed).substr(nl + 1));
    }
    case Kind::Regex: {
      const std::regex re(pattern);
      std::match_results<std::string_view::const_iterator> m;
      if (std::regex_search(text.begin(), text.end(), m, re)) {
        return m.size() > 1 ? m[1].str() : m[0].str();
      }
      return std::string(text);
    }
  }
  return std::string(text);
}

SystemGraph::SystemGraph(std::string name, std::vector<ModuleNode> modules)
    : name_(std::move(name)), modules_(std::move(modules)), edges_(derive_edges(modules_)) {}

SystemGraph::SystemGraph(std::string name, std::vector<ModuleNode> modules, std::vector<Edge> edges)
    : name_(std::move(name)), modules_(std::move(modules)), edges_(std::move(edges)) {
  std::sort(edges_.begin(), edges_.end());
}

const ModuleNode& SystemGraph::module(ModuleId id) const {
  if (id.index < 1 || static_cast<std::size_t>(id.index) > modules_.size()) {
    throw Error(ErrorCode::UnknownModule, "module " + std::to_string(id.index) + " is not in system " + name_);
  }
  return modules_[static_cast<std::size_t>(id.index - 1)];
}

std::optional<ModuleId> SystemGraph::find(std::string_view module_name) const {
  for (const auto& m : modules_) {
    if (m.name == module_name) return m.id;
  }
  return std::nullopt;
}

std::vector<Placeholder> parse_placeholders(std::string_view tpl) {
  std::vector<Placeholder> out;
  render_template(
      tpl, [&] { out.push_back({}); return std::string(); },
      [&](const std::string& name) { out.push_back({name}); return std::string(); });
  return out;
}

std::optional<GraphError> validate(const SystemGraph& graph) {
  const auto modules = graph.modules();
  const int L = static_cast<int>(modules.size());
  if (L == 0) {
    return GraphError{ErrorCode::MultipleOutputModules, "system has no modules, so no output module", {}, {}};
  }

  std::set<std::string> names;
  for (int pos = 0; pos < L; ++pos) {
    const auto& node = modules[static_cast<std::size_t>(pos)];
    if (node.id.index != pos + 1) {
      return GraphError{ErrorCode::ConfigError,
                        "module ids must be contiguous from 1; found " + std::to_string(node.id.index) +
                            " at position " + std::to_string(pos + 1),
                        node.id, {}};
    }
    if (!valid_identifier(node.name)) {
      return GraphError{ErrorCode::DuplicateModuleName, "invalid module name '" + node.name + "'", node.id, {}};
    }
    if (!names.insert(node.name).second) {
      return GraphError{ErrorCode::DuplicateModuleName, "module name '" + node.name + "' is used twice", node.id, {}};
    }
  }

  for (const auto& node : modules) {
    for (const auto& in : node.inputs) {
      if (in.module && (in.module->index < 1 || in.module->index > L)) {
        return GraphError{ErrorCode::DanglingEdge,
                          module_ref(graph, node.id) + " reads from nonexistent module " +
                              std::to_string(in.module->index),
                          node.id, Edge{*in.module, node.id}};
      }
    }
  }
  const auto derived = derive_edges(modules);
  std::vector<Edge> declared(graph.edges().begin(), graph.edges().end());
  declared.erase(std::unique(declared.begin(), declared.end()), declared.end());
  for (const auto& e : declared) {
    if (!std::binary_search(derived.begin(), derived.end(), e)) {
      return GraphError{ErrorCode::DanglingEdge,
                        "edge " + std::to_string(e.first.index) + "->" + std::to_string(e.second.index) +
                            " has no matching declared input",
                        e.second, e};
    }
  }
  for (const auto& e : derived) {
    if (!std::binary_search(declared.begin(), declared.end(), e)) {
      return GraphError{ErrorCode::DanglingEdge,
                        "input of " + module_ref(graph, e.second) + " from module " + std::to_string(e.first.index) +
                            " is missing from the edge list",
                        e.second, e};
    }
  }

  for (const auto& node : modules) {
    std::vector<Placeholder> placeholders;
    try {
      placeholders = parse_placeholders(node.prompt_template);
    } catch (const Error& err) {
      return GraphError{ErrorCode::UnboundPlaceholder, module_ref(graph, node.id) + ": " + err.what(), node.id, {}};
    }
    std::vector<InputSource> seen;
    for (const auto& in : node.inputs) {
      if (std::find(seen.begin(), seen.end(), in) != seen.end()) {
        return GraphError{ErrorCode::UnboundPlaceholder,
                          module_ref(graph, node.id) + " declares the same input twice", node.id, {}};
      }
      seen.push_back(in);
    }
    std::set<std::size_t> used;
    for (const auto& ph : placeholders) {
      std::optional<std::size_t> bound;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const auto& in = node.inputs[i];
        const bool match = ph.module_name ? (in.module && graph.module(*in.module).name == *ph.module_name)
                                          : in.is_query();
        if (match) bound = i;
      }
      if (!bound) {
        const std::string what = ph.module_name ? "{module:" + *ph.module_name + "}" : "{query}";
        return GraphError{ErrorCode::UnboundPlaceholder,
                          module_ref(graph, node.id) + ": placeholder " + what + " is not a declared input", node.id,
                          {}};
      }
      used.insert(*bound);
    }
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!used.contains(i)) {
        const auto& in = node.inputs[i];
        const std::string what = in.module ? module_ref(graph, *in.module) : std::string("the query");
        return GraphError{ErrorCode::UnboundPlaceholder,
                          module_ref(graph, node.id) + " declares input from " + what +
                              " but its template has no placeholder for it",
                          node.id, in.module ? std::optional<Edge>(Edge{*in.module, node.id}) : std::nullopt};
      }
    }
  }

  std::vector<int> indegree(static_cast<std::size_t>(L) + 1, 0);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(L) + 1);
  for (const auto& [from, to] : derived) {
    ++indegree[static_cast<std::size_t>(to.index)];
    out[static_cast<std::size_t>(from.index)].push_back(to.index);
  }
  std::vector<int> ready;
  for (int v = 1; v <= L; ++v) {
    if (indegree[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
  }
  std::vector<bool> done(static_cast<std::size_t>(L) + 1, false);
  int processed = 0;
  while (!ready.empty()) {
    const int v = ready.back();
    ready.pop_back();
    done[static_cast<std::size_t>(v)] = true;
    ++processed;
    for (int w : out[static_cast<std::size_t>(v)]) {
      if (--indegree[static_cast<std::size_t>(w)] == 0) ready.push_back(w);
    }
  }
  if (processed != L) {
    for (const auto& e : derived) {
      if (!done[static_cast<std::size_t>(e.first.index)] && !done[static_cast<std::size_t>(e.second.index)]) {
        return GraphError{ErrorCode::CycleDetected,
                          "cycle through edge " + std::to_string(e.first.index) + "->" +
                              std::to_string(e.second.index),
                          e.first, e};
      }
    }
  }

  std::vector<int> sinks;
  for (int v = 1; v <= L; ++v) {
    if (out[static_cast<std::size_t>(v)].empty()) sinks.push_back(v);
  }
  if (sinks.size() != 1) {
    std::string list;
    for (int s : sinks) list += (list.empty() ? "" : ", ") + std::to_string(s);
    return GraphError{ErrorCode::MultipleOutputModules, "modules without output edges: " + list,
                      ModuleId{sinks.size() > 1 ? sinks[1] : 1}, {}};
  }
  if (sinks.front() != L) {
    return GraphError{ErrorCode::MultipleOutputModules,
                      "the output module must be the last module; found " + module_ref(graph, ModuleId{sinks.front()}),
                      ModuleId{sinks.front()}, {}};
  }
  return std::nullopt;
}

std::vector<ModuleId> topological_order(const SystemGraph& graph) {
  const auto L = graph.size();
  std::vector<int> indegree(L + 1, 0);
  std::vector<std::vector<int>> out(L + 1);
  for (const auto& [from, to] : graph.edges()) {
    ++indegree[static_cast<std::size_t>(to.index)];
    out[static_cast<std::size_t>(from.index)].push_back(to.index);
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (std::size_t v = 1; v <= L; ++v) {
    if (indegree[v] == 0) ready.push(static_cast<int>(v));
  }
  std::vector<ModuleId> order;
  order.reserve(L);
  while (!ready.empty()) {
    const int v = ready.top();
    ready.pop();
    order.push_back(ModuleId{v});
    for (int w : out[static_cast<std::size_t>(v)]) {
      if (--indegree[static_cast<std::size_t>(w)] == 0) ready.push(w);
    }
  }
  return order;
}

std::string describe(const SystemGraph& graph) {
  std::ostringstream os;
  os << graph.name() << ": a compound AI system with " << graph.size() << " module"
     << (graph.size() == 1 ? "" : "s") << ".\n";
  for (const auto& node : graph.modules()) {
    os << "Module " << node.id.index << " (" << node.name << ") receives ";
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (i > 0) os << (i + 1 == node.inputs.size() ? " and " : ", ");
      const auto& in = node.inputs[i];
      if (in.is_query()) {
        os << "the query";
      } else {
        os << "the output of module " << in.module->index << " (" << graph.module(*in.module).name << ")";
      }
    }
    if (node.inputs.empty()) os << "no inputs";
    os << '.';
    if (!node.description.empty()) os << ' ' << node.description;
    os << '\n';
  }
  const auto& last = graph.module(graph.output_module());
  os << "The final output is the output of module " << last.id.index << " (" << last.name << ").";
  return os.str();
}

namespace {

Extractor extractor_from_json(const json& j) {
  Extractor ex;
  const std::string kind = j.is_string() ? j.get<std::string>() : j.value("kind", "identity");
  if (kind == "identity") {
    ex.kind = Extractor::Kind::Identity;
  } else if (kind == "trim") {
    ex.kind = Extractor::Kind::Trim;
  } else if (kind == "last_line") {
    ex.kind = Extractor::Kind::LastLine;
  } else if (kind == "regex") {
    ex.kind = Extractor::Kind::Regex;
    ex.pattern = j.at("pattern").get<std::string>();
    try {
      std::regex probe(ex.pattern);
    } catch (const std::regex_error& err) {
      throw Error(ErrorCode::ConfigError, "bad extractor pattern '" + ex.pattern + "': " + err.what());
    }
  } else {
    throw Error(ErrorCode::ConfigError, "unknown extractor kind '" + kind + "'");
  }
  return ex;
}

json extractor_to_json(const Extractor& ex) {
  switch (ex.kind) {
    case Extractor::Kind::Identity: return "identity";
    case Extractor::Kind::Trim: return "trim";
    case Extractor::Kind::LastLine: return "last_line";
    case Extractor::Kind::Regex: return json{{"kind", "regex"}, {"pattern", ex.pattern}};
  }
  return "identity";
}

}  // namespace

SystemGraph parse_system(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("system file is not valid JSON: ") + err.what());
  }
  try {
    const auto& mods = doc.at("modules");
    std::map<std::string, int> index_of;
    for (std::size_t i = 0; i < mods.size(); ++i) {
      index_of.emplace(mods[i].at("name").get<std::string>(), static_cast<int>(i + 1));
    }
    std::vector<ModuleNode> nodes;
    for (std::size_t i = 0; i < mods.size(); ++i) {
      const auto& m = mods[i];
      ModuleNode node;
      node.id = ModuleId{static_cast<int>(i + 1)};
      node.name = m.at("name").get<std::string>();
      node.prompt_template = m.at("template").get<std::string>();
      node.description = m.value("description", "");
      if (m.contains("extractor")) node.extractor = extractor_from_json(m.at("extractor"));
      for (const auto& in : m.at("inputs")) {
        if (in.is_number_integer()) {
          node.inputs.push_back(InputSource::from(ModuleId{in.get<int>()}));
          continue;
        }
        const auto src = in.get<std::string>();
        if (src == "query") {
          node.inputs.push_back(InputSource::query());
        } else if (auto it = index_of.find(src); it != index_of.end()) {
          node.inputs.push_back(InputSource::from(ModuleId{it->second}));
        } else {
          throw Error(ErrorCode::ConfigError,
                      "DanglingEdge: module '" + node.name + "' reads from unknown module '" + src + "'");
        }
      }
      nodes.push_back(std::move(node));
    }
    const std::string name = doc.value("name", "system");
    if (doc.contains("edges")) {
      std::vector<Edge> edges;
      for (const auto& e : doc.at("edges")) {
        edges.push_back({ModuleId{e.at(0).get<int>()}, ModuleId{e.at(1).get<int>()}});
      }
      return SystemGraph(name, std::move(nodes), std::move(edges));
    }
    return SystemGraph(name, std::move(nodes));
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("malformed system file: ") + err.what());
  }
}

SystemGraph load_system(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open system file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto graph = parse_system(buf.str());
  if (auto err = validate(graph)) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + std::string(to_string(err->code)) + ": " + err->message);
  }
  return graph;
}

std::string dump_system(const SystemGraph& graph) {
  json mods = json::array();
  for (const auto& node : graph.modules()) {
    json inputs = json::array();
    for (const auto& in : node.inputs) {
      if (in.is_query()) {
        inputs.push_back("query");
      } else if (in.module->index >= 1 && static_cast<std::size_t>(in.module->index) <= graph.size()) {
        inputs.push_back(graph.module(*in.module).name);
      } else {
        inputs.push_back(in.module->index);
      }
    }
    json m{{"name", node.name}, {"template", node.prompt_template}, {"inputs", inputs}};
    if (node.extractor.kind != Extractor::Kind::Identity) m["extractor"] = extractor_to_json(node.extractor);
    if (!node.description.empty()) m["description"] = node.description;
    mods.push_back(std::move(m));
  }
  return json{{"name", graph.name()}, {"modules", mods}}.dump(2) + "\n";
}

std::string Allocation::label() const {
  std::string out;
  for (const auto& m : models_) {
    if (!out.empty()) out.push_back('-');
    out += std::to_string(m.index);
  }
  return out;
}

Allocation with_substitution(const Allocation& f, ModuleId i, ModelId k, std::size_t model_count) {
  if (i.index < 1 || static_cast<std::size_t>(i.index) > f.size()) {
    throw Error(ErrorCode::UnknownModule, "module " + std::to_string(i.index) + " is outside the allocation");
  }
  if (k.index < 1 || static_cast<std::size_t>(k.index) > model_count) {
    throw Error(ErrorCode::UnknownModel, "model " + std::to_string(k.index) + " is outside the pool");
  }
  std::vector<ModelId> models(f.models().begin(), f.models().end());
  models[static_cast<std::size_t>(i.index - 1)] = k;
  return Allocation(std::move(models));
}

Allocation uniform_allocation(std::size_t modules, ModelId k) {
  return Allocation(std::vector<ModelId>(modules, k));
}

Allocation allocation_from_index(std::size_t index, std::size_t modules, std::size_t model_count) {
  std::vector<ModelId> models(modules);
  for (std::size_t pos = modules; pos-- > 0;) {
    models[pos] = ModelId{static_cast<int>(index % model_count) + 1};
    index /= model_count;
  }
  return Allocation(std::move(models));
}

std::size_t allocation_index(const Allocation& f, std::size_t model_count) {
  std::size_t index = 0;
  for (const auto& m : f.models()) index = index * model_count + static_cast<std::size_t>(m.index - 1);
  return index;
}

std::optional<std::size_t> allocation_space_size(std::size_t modules, std::size_t model_count, std::size_t cap) {
  std::size_t total = 1;
  for (std::size_t i = 0; i < modules; ++i) {
    if (model_count != 0 && total > cap / model_count) return std::nullopt;
    total *= model_count;
  }
  if (total > cap) return std::nullopt;
  return total;
}

}  // namespace modsel
