#include "merit/error.hpp"

namespace merit {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kSchema: return "schema_error";
  }
  return "error";
}

}  // namespace merit
