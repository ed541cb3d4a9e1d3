#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace headfield {

/// Error categories. The CLI maps these onto exit codes and the service
/// onto HTTP status classes.
enum class ErrorKind {
  dimension,
  domain,
  parameter,
  configuration,
  matrix,
  manifest,
  checksum,
  missing_file,
  io,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::domain: return "domain";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::matrix: return "matrix";
    case ErrorKind::manifest: return "manifest";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::missing_file: return "missing_file";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::dimension, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::parameter, what) {}
};

class ConfigurationError : public Error {
 public:
  explicit ConfigurationError(const std::string& what) : Error(ErrorKind::configuration, what) {}
};

class MatrixError : public Error {
 public:
  explicit MatrixError(const std::string& what) : Error(ErrorKind::matrix, what) {}
};

class ManifestError : public Error {
 public:
  explicit ManifestError(const std::string& what) : Error(ErrorKind::manifest, what) {}
};

class ChecksumError : public Error {
 public:
  explicit ChecksumError(const std::string& what) : Error(ErrorKind::checksum, what) {}
};

class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& what) : Error(ErrorKind::missing_file, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

inline std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace headfield
