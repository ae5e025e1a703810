#include "cfr/error.hpp"

namespace cfr {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Input: return "input";
    case ErrorCode::Configuration: return "configuration";
    case ErrorCode::Precondition: return "precondition";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::AbsoluteContinuity: return "absolute-continuity";
    case ErrorCode::ProblemSpec: return "problem-spec";
    case ErrorCode::PerturbationSpec: return "perturbation-spec";
    case ErrorCode::Query: return "query";
    case ErrorCode::Dependency: return "dependency";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace cfr
