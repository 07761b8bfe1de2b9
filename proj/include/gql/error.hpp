#pragma once

#include <stdexcept>
#include <string>

namespace gql {

enum class ErrorCode {
  Malformed,
  PriorSum,
  DuplicateRows,
  UnknownGroupLabel,
  InseparableGroups,
  GroupExhausted,
  StuckNode,
  TreeMismatch,
  MaterializationCap,
  InconsistentResponse,
  ProtocolViolation,
  InvalidArgument,
  NotFound,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gql
