#pragma once

#include <stdexcept>
#include <string>

namespace m3pt {

// Error categories, mapped to process exit codes at the C API boundary.
enum class ErrorKind {
  Config,     // bad configuration value or constraint violation
  Dimension,  // input dimensions violate a precondition
  Shape,      // tensor shape mismatch inside the pipeline
  Archive,    // weight archive parse/apply failure
  Io,         // filesystem / file format problem
  Data,       // sequence or benchmark data inconsistency
  Numeric,    // non-finite value or failed numeric contract
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace m3pt
