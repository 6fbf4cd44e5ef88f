#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace scm {

enum class ErrorKind { Config, Data, Numeric };

// Base error carrying the module that raised it and, when meaningful, the
// block index. The CLI maps kinds to exit codes (Config/Data -> 2, Numeric -> 1).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message,
        std::optional<int> block = std::nullopt, std::string hint = {});

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  std::optional<int> block() const noexcept { return block_; }
  const std::string& hint() const noexcept { return hint_; }

 private:
  ErrorKind kind_;
  std::string module_;
  std::optional<int> block_;
  std::string hint_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string module, const std::string& message,
              std::optional<int> block = std::nullopt, std::string hint = {})
      : Error(ErrorKind::Config, std::move(module), message, block, std::move(hint)) {}
};

class DataError : public Error {
 public:
  DataError(std::string module, const std::string& message,
            std::optional<int> block = std::nullopt, std::string hint = {})
      : Error(ErrorKind::Data, std::move(module), message, block, std::move(hint)) {}
};

class NumericError : public Error {
 public:
  NumericError(std::string module, const std::string& message,
               std::optional<int> block = std::nullopt, std::string hint = {})
      : Error(ErrorKind::Numeric, std::move(module), message, block, std::move(hint)) {}
};

}  // namespace scm
