#pragma once

#include <stdexcept>
#include <string>

namespace ovseg {

enum class ErrorKind {
  kValidation,
  kDiverged,
  kIo,
};

// Single exception type for the library. The kind selects the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) {
  throw Error(ErrorKind::kValidation, what);
}

[[noreturn]] inline void fail_io(const std::string& what) {
  throw Error(ErrorKind::kIo, what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(what);
}

}  // namespace ovseg
