#include "rmf/error.hpp"

namespace rmf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::report_write: return "report_write";
  }
  return "internal";
}

}  // namespace rmf
