#pragma once

#include <stdexcept>
#include <string>

namespace gcnn {

// Broad failure classes; the C API and CLI map these onto status/exit codes.
enum class ErrorKind {
  kShape,     // nonconforming tensor shapes
  kConfig,    // invalid configuration values
  kSizing,    // image too small for the configured graph window
  kFormat,    // unreadable or unsupported file contents
  kIo,        // filesystem failures
  kNumeric,   // NaN/Inf encountered
  kUsage,     // API misuse (e.g. backward on a detached tensor)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class SizingError : public Error {
 public:
  explicit SizingError(const std::string& what) : Error(ErrorKind::kSizing, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

}  // namespace gcnn
