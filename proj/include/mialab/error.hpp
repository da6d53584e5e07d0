#pragma once

#include <stdexcept>
#include <string>

namespace mialab {

// Error categories surfaced by the library. The CLI maps ConfigError,
// DataError, DimensionError, SizeError and IntegrityError to exit code 1
// (validation) and everything else to exit code 2 (runtime).
enum class ErrorKind {
  kConfig,
  kData,
  kDimension,
  kSize,
  kIntegrity,
  kStorage,
  kTraining,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  bool is_validation() const { return kind_ != ErrorKind::kStorage && kind_ != ErrorKind::kTraining; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace mialab
