#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modsel/harness.hpp"

namespace modsel {

/// A table with an ID row and a task row; the question asks for the task
/// under one ID.
struct TableTask {
  std::string table_id;
  std::vector<int> id_row;
  std::vector<std::string> task_row;
  std::vector<long long> values;  // X for arithmetic cells, the option suffix for bias cells
  int target_id = 0;
  std::string answer;

  std::size_t target_position() const;
  std::string question() const;
  Task task() const { return {table_id, question(), answer}; }
};

struct TableArithmeticConfig {
  std::size_t n_questions = 100;
  std::size_t entries_per_row = 100;
  long long x_min = 1;
  long long x_max = 100;
  std::uint64_t seed = 0;
};

struct TableBiasConfig {
  std::size_t n_questions = 100;
  std::size_t entries_per_row = 40;
  long long label_max = 999;  // option suffixes are drawn from [1, label_max] without repeats
  std::uint64_t seed = 0;
};

/// "What is X+(10.9>10.11)?"
std::string arithmetic_cell(long long x);
/// X plus the numeric truth of 10.9 > 10.11.
std::string arithmetic_answer(long long x);
std::string bias_cell(long long x);
std::string bias_answer(long long x);

std::vector<TableTask> table_arithmetic_tables(const TableArithmeticConfig& config);
std::vector<TableTask> table_bias_tables(const TableBiasConfig& config);
std::vector<Task> gen_table_arithmetic(const TableArithmeticConfig& config);
std::vector<Task> gen_table_bias(const TableBiasConfig& config);

}  // namespace modsel
