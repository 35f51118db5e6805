#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trajgen {

using LinkId = std::int32_t;
using NodeId = std::int32_t;
using Token = std::int32_t;

using Trajectory = std::vector<LinkId>;
using TokenSeq = std::vector<Token>;
using Corpus = std::vector<Trajectory>;

// Errors carry the process exit code the CLI reports for them.
enum class ErrorKind : int {
  config = 2,
  data_format = 3,
  numerical = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::data_format, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

}  // namespace trajgen
