#pragma once

#include <stdexcept>
#include <string>

namespace merit {

enum class ErrorKind {
  kShape,
  kInvalidArgument,
  kNonFinite,
  kParse,
  kIo,
  kSchema,
};

const char* to_string(ErrorKind kind);

// Every failure surfaced by the library is an Error; the CLI turns `kind`
// into the machine-readable error document.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) fail(kind, message);
}

}  // namespace merit
