#pragma once

#include <stdexcept>
#include <string>

namespace dynmole {

// Error categories surfaced by the library. The CLI maps them onto exit codes.

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IoError : std::runtime_error {
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace dynmole
