#include "modsel/system_graph.hpp"

namespace modsel {

namespace {

ModuleNode node(int id, std::string name, std::string tpl, std::vector<InputSource> inputs, std::string description) {
  ModuleNode n;
  n.id = ModuleId{id};
  n.name = std::move(name);
  n.prompt_template = std::move(tpl);
  n.inputs = std::move(inputs);
  n.description = std::move(description);
  return n;
}

InputSource from(int id) { return InputSource::from(ModuleId{id}); }

SystemGraph locate_solve() {
  auto solve = node(2, "solve",
                    "Answer the following task. Return only the final answer, with no explanation.\n\n"
                    "Task: {module:locate}",
                    {from(1)}, "It answers the extracted task.");
  solve.extractor.kind = Extractor::Kind::Trim;
  return SystemGraph(
      "locate-solve",
      {node(1, "locate",
            "Extract the task whose ID is requested from the table below. Return only the text of that task.\n\n"
            "{query}",
            {InputSource::query()}, "It extracts the task associated with the requested ID from the input table."),
       std::move(solve)});
}

SystemGraph self_refine() {
  auto refiner = node(3, "refiner",
                      "Improve the proposed answer using the feedback. Return only the final answer.\n\n"
                      "Question: {query}\n\nProposed answer: {module:generator}\n\nFeedback: {module:critic}",
                      {InputSource::query(), from(1), from(2)}, "It refines the initial answer using the feedback.");
  refiner.extractor.kind = Extractor::Kind::Trim;
  return SystemGraph(
      "self-refine",
      {node(1, "generator", "Answer the following question.\n\nQuestion: {query}", {InputSource::query()},
            "It gives an initial answer to the question."),
       node(2, "critic",
            "Review the proposed answer to the question below. Point out any mistakes and give concise "
            "feedback.\n\nQuestion: {query}\n\nProposed answer: {module:generator}",
            {InputSource::query(), from(1)}, "It gives feedback on the initial answer."),
       std::move(refiner)});
}

SystemGraph multi_agent_debate() {
  std::vector<ModuleNode> nodes;
  for (int g = 1; g <= 3; ++g) {
    nodes.push_back(node(g, "generator-" + std::to_string(g), "Answer the following question.\n\nQuestion: {query}",
                         {InputSource::query()}, "It offers an initial answer to the question."));
  }
  const std::string answers =
      "Answer 1: {module:generator-1}\n\nAnswer 2: {module:generator-2}\n\nAnswer 3: {module:generator-3}";
  for (int d = 1; d <= 2; ++d) {
    nodes.push_back(node(3 + d, "debater-" + std::to_string(d),
                         "Several agents answered the question below. Debate which answer is correct and state the "
                         "answer you believe is correct.\n\nQuestion: {query}\n\n" +
                             answers,
                         {InputSource::query(), from(1), from(2), from(3)},
                         "It debates which initial answer is correct."));
  }
  auto last = node(6, "debater-3",
                   "Several agents answered the question below and two debaters argued about them. Decide which "
                   "answer is correct. Return only the final answer.\n\nQuestion: {query}\n\n" +
                       answers + "\n\nDebater 1: {module:debater-1}\n\nDebater 2: {module:debater-2}",
                   {InputSource::query(), from(1), from(2), from(3), from(4), from(5)},
                   "It debates the initial answers with the other debaters and gives the final answer.");
  last.extractor.kind = Extractor::Kind::Trim;
  nodes.push_back(std::move(last));
  return SystemGraph("multi-agent-debate", std::move(nodes));
}

}  // namespace

std::vector<std::string> builtin_system_names() { return {"locate-solve", "self-refine", "multi-agent-debate"}; }

SystemGraph builtin_system(std::string_view name) {
  if (name == "locate-solve") return locate_solve();
  if (name == "self-refine") return self_refine();
  if (name == "multi-agent-debate") return multi_agent_debate();
  throw Error(ErrorCode::ConfigError, "no built-in system named '" + std::string(name) + "'");
}

}  // namespace modsel
