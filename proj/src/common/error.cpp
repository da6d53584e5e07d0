#include "mialab/error.hpp"

namespace mialab {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kStorage: return "storage";
    case ErrorKind::kTraining: return "training";
  }
  return "unknown";
}

}  // namespace mialab
