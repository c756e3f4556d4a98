#include "modsel/diagnoser.hpp"

#include <cctype>
#include <iostream>

namespace modsel {

namespace {

constexpr std::string_view kHeaderBefore =
    "You are an error diagnosis expert for compound AI systems. Below is the description of a compound AI "
    "system consisting of multiple modules, a query, the generations from each module of the compound AI "
    "system, the final output, and the desired answer. Assume that the desired answer is 100% correct. If the "
    "final output matches the correct answer, generate 'error: 0'. Otherwise, analyze whether module ";
constexpr std::string_view kHeaderAfter =
    " leads to the mistake. If so, generate 'error: 1'. Otherwise, generate 'error: 0'. Think step by step.";

void section(std::string& out, std::string_view title, std::string_view body) {
  out += "\n\n[";
  out += title;
  out += "]:\n";
  out += body;
}

bool ieq(char a, char b) {
  return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string render_diagnoser_prompt(const SystemGraph& graph, const Trace& trace, const Task& task, ModuleId j) {
  std::string out;
  out += kHeaderBefore;
  out += std::to_string(j.index);
  out += kHeaderAfter;
  section(out, "Compound AI system", describe(graph));
  section(out, "query", task.question);
  for (const auto& step : trace.per_module) {
    section(out, "module " + std::to_string(step.module.index) + " output", step.output);
  }
  section(out, "final output", trace.final_output);
  section(out, "desired answer", task.answer);
  out += "\n\n[your analysis]:";
  return out;
}

int parse_error_flag(std::string_view text) {
  constexpr std::string_view word = "error";
  int flag = -1;
  for (std::size_t pos = 0; pos + word.size() <= text.size(); ++pos) {
    bool hit = true;
    for (std::size_t k = 0; k < word.size() && hit; ++k) hit = ieq(text[pos + k], word[k]);
    if (!hit) continue;
    // "errors", "terror" and the like are not verdicts
    if (pos > 0 && std::isalpha(static_cast<unsigned char>(text[pos - 1]))) continue;
    std::size_t p = pos + word.size();
    while (p < text.size() && is_space(text[p])) ++p;
    if (p >= text.size() || text[p] != ':') continue;
    ++p;
    while (p < text.size() && is_space(text[p])) ++p;
    if (p >= text.size() || (text[p] != '0' && text[p] != '1')) continue;
    if (p + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[p + 1]))) continue;
    flag = text[p] - '0';
  }
  if (flag < 0) throw Error(ErrorCode::UnparseableJudgment, "no 'error: 0' or 'error: 1' in judgment");
  return flag;
}

DiagnosisReport diagnose(const SystemGraph& graph, const Trace& trace, const Task& task, ModuleId j,
                         const DiagnoserConfig& config, ModelPool& pool) {
  if (!(config.gamma >= 0.0)) throw Error(ErrorCode::ConfigError, "gamma must be non-negative");
  DiagnosisReport rep;
  rep.task_id = task.id;
  rep.module = j;
  rep.allocation = trace.allocation;
  rep.end_to_end = end_to_end_perf(trace, task);
  if (rep.end_to_end == 1 && config.short_circuit) {
    rep.error_flag = 0;
  } else {
    const auto prompt = render_diagnoser_prompt(graph, trace, task, j);
    rep.raw_judgment = pool.complete(pool.request(config.judge_model, prompt)).text;
    rep.judged = true;
    try {
      rep.error_flag = parse_error_flag(rep.raw_judgment);
    } catch (const Error&) {
      rep.unparseable = true;
      rep.error_flag = 0;
      std::clog << "modsel: unparseable judgment for task " << task.id << " module " << j.index
                << "; treating as error: 0\n";
    }
  }
  rep.estimated_perf = 1 - rep.error_flag;
  rep.combined_score = rep.estimated_perf + config.gamma * rep.end_to_end;
  return rep;
}

DiagnosisReport module_score(const SystemGraph& graph, const Allocation& f, const Task& task, ModuleId j,
                             const DiagnoserConfig& config, ModelPool& pool) {
  return diagnose(graph, execute(graph, f, task, pool), task, j, config, pool);
}

}  // namespace modsel
