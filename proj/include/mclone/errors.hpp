#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mclone {

/// Base of every error the library raises. `kind()` is a short stable tag
/// used by the CLI to produce machine-parsable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class TapeError : public Error {
 public:
  explicit TapeError(const std::string& what) : Error("tape", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

std::string dims_to_string(const std::vector<std::int64_t>& dims);

}  // namespace mclone
