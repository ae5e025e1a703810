#pragma once

#include <stdexcept>
#include <string>

namespace cfr {

/// Error categories surfaced by the library. The CLI maps these onto exit codes.
enum class ErrorCode {
  Input,               // malformed argument, dimension mismatch, empty list
  Configuration,       // invalid config, missing domain, step-size violation
  Precondition,        // operation called on a state it does not accept
  Infeasible,          // no counterfactual found
  AbsoluteContinuity,  // sampling distribution not dominated by the reference
  ProblemSpec,         // example outside the instance-norm bound
  PerturbationSpec,    // datasets do not share the declared structure
  Query,               // bound query missing parameters
  Dependency,          // required stage output absent
  Internal,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace cfr
