#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace modsel {

enum class ErrorCode {
  CycleDetected,
  UnboundPlaceholder,
  MultipleOutputModules,
  DanglingEdge,
  DuplicateModuleName,
  UnknownModule,
  UnknownModel,
  EndpointError,
  BudgetExhausted,
  UnparseableJudgment,
  EnumerationTooLarge,
  InfeasibleSpec,
  UnknownBenchmark,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Base for every error raised by the library. The code is stable and is what
/// tests and the CLI dispatch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class EndpointError : public Error {
 public:
  EndpointError(const std::string& message, int attempts)
      : Error(ErrorCode::EndpointError, message), attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

class BudgetExhausted : public Error {
 public:
  explicit BudgetExhausted(const std::string& message) : Error(ErrorCode::BudgetExhausted, message) {}
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::UnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::MultipleOutputModules: return "MultipleOutputModules";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::DuplicateModuleName: return "DuplicateModuleName";
    case ErrorCode::UnknownModule: return "UnknownModule";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::EndpointError: return "EndpointError";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::UnparseableJudgment: return "UnparseableJudgment";
    case ErrorCode::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::UnknownBenchmark: return "UnknownBenchmark";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace modsel
