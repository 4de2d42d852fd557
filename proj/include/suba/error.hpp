#pragma once

#include <stdexcept>
#include <string>

namespace suba {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  resource_limit,
  invalid_phase,
  stale_posterior,
  duplicate_outcome,
  unknown_patient,
  unknown_trial,
  no_data,
  non_convergence,
  degenerate_design,
  undefined_subset,
  empty_set,
  parse_error,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::resource_limit: return "resource_limit";
    case ErrorCode::invalid_phase: return "invalid_phase";
    case ErrorCode::stale_posterior: return "stale_posterior";
    case ErrorCode::duplicate_outcome: return "duplicate_outcome";
    case ErrorCode::unknown_patient: return "unknown_patient";
    case ErrorCode::unknown_trial: return "unknown_trial";
    case ErrorCode::no_data: return "no_data";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::degenerate_design: return "degenerate_design";
    case ErrorCode::undefined_subset: return "undefined_subset";
    case ErrorCode::empty_set: return "empty_set";
    case ErrorCode::parse_error: return "parse_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace suba
