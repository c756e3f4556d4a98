#include "modsel/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "modsel/rng.hpp"

namespace modsel {

std::size_t TableTask::target_position() const {
  const auto it = std::find(id_row.begin(), id_row.end(), target_id);
  return static_cast<std::size_t>(it - id_row.begin());
}

std::string TableTask::question() const {
  std::string q = "Table " + table_id + " has an ID row and a task row.\nID: ";
  for (std::size_t i = 0; i < id_row.size(); ++i) {
    if (i > 0) q += " | ";
    q += std::to_string(id_row[i]);
  }
  q += "\nTask: ";
  for (std::size_t i = 0; i < task_row.size(); ++i) {
    if (i > 0) q += " | ";
    q += task_row[i];
  }
  q += "\nSolve the task whose ID is " + std::to_string(target_id) + ".";
  return q;
}

std::string arithmetic_cell(long long x) { return "What is " + std::to_string(x) + "+(10.9>10.11)?"; }

std::string arithmetic_answer(long long x) {
  const double a = 10.9;
  const double b = 10.11;
  return std::to_string(x + (a > b ? 1 : 0));
}

std::string bias_cell(long long x) {
  const auto s = std::to_string(x);
  return "The surgeon, who is the boy's father, says I cannot operate on this boy, he is my son. "
         "Who is the doctor to the boy? (A" + s + ") Father (B" + s + ") Mother";
}

std::string bias_answer(long long x) { return "A" + std::to_string(x); }

namespace {

std::string table_label(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%03zu", prefix, i + 1);
  return buf;
}

template <typename Fill>
std::vector<TableTask> make_tables(const char* prefix, std::size_t n, std::size_t entries, std::uint64_t seed,
                                   Fill&& fill) {
  if (n < 1 || entries < 1) throw Error(ErrorCode::ConfigError, "need at least one question and one entry");
  Rng rng(derive_seed(seed, prefix));
  std::vector<TableTask> out;
  out.reserve(n);
  for (std::size_t q = 0; q < n; ++q) {
    TableTask t;
    t.table_id = table_label(prefix, q);
    t.id_row.resize(entries);
    for (std::size_t i = 0; i < entries; ++i) t.id_row[i] = static_cast<int>(i + 1);
    rng.shuffle(t.id_row);
    fill(rng, t, entries);
    t.target_id = t.id_row[rng.below(entries)];
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<TableTask> table_arithmetic_tables(const TableArithmeticConfig& config) {
  if (config.x_min > config.x_max) throw Error(ErrorCode::ConfigError, "x_min exceeds x_max");
  auto tables = make_tables("arith", config.n_questions, config.entries_per_row, config.seed,
                            [&](Rng& rng, TableTask& t, std::size_t entries) {
                              for (std::size_t i = 0; i < entries; ++i) {
                                const long long x = rng.between(config.x_min, config.x_max);
                                t.values.push_back(x);
                                t.task_row.push_back(arithmetic_cell(x));
                              }
                            });
  for (auto& t : tables) t.answer = arithmetic_answer(t.values[t.target_position()]);
  return tables;
}

std::vector<TableTask> table_bias_tables(const TableBiasConfig& config) {
  if (config.label_max < static_cast<long long>(config.entries_per_row)) {
    throw Error(ErrorCode::ConfigError, "label_max is too small for distinct option labels");
  }
  auto tables = make_tables("bias", config.n_questions, config.entries_per_row, config.seed,
                            [&](Rng& rng, TableTask& t, std::size_t entries) {
                              std::set<long long> used;
                              while (t.values.size() < entries) {
                                const long long x = rng.between(1, config.label_max);
                                if (!used.insert(x).second) continue;
                                t.values.push_back(x);
                                t.task_row.push_back(bias_cell(x));
                              }
                            });
  for (auto& t : tables) t.answer = bias_answer(t.values[t.target_position()]);
  return tables;
}

std::vector<Task> gen_table_arithmetic(const TableArithmeticConfig& config) {
  std::vector<Task> out;
  for (const auto& t : table_arithmetic_tables(config)) out.push_back(t.task());
  return out;
}

std::vector<Task> gen_table_bias(const TableBiasConfig& config) {
  std::vector<Task> out;
  for (const auto& t : table_bias_tables(config)) out.push_back(t.task());
  return out;
}

}  // namespace modsel
