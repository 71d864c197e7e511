#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include "sveb/errors.hpp"

namespace sveb::cli {

// Bad input data, tied to a line of the input file when one is known.
class DataError : public InvalidInput {
 public:
  DataError(std::string kind, std::string message, std::optional<std::size_t> line = std::nullopt)
      : InvalidInput(line ? "line " + std::to_string(*line) + ": " + message : message),
        kind_(std::move(kind)),
        line_(line) {}
  [[nodiscard]] const std::string& kind() const { return kind_; }
  [[nodiscard]] std::optional<std::size_t> line() const { return line_; }

 private:
  std::string kind_;
  std::optional<std::size_t> line_;
};

// Unreadable input or unwritable output.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kOk = 0, kInternal = 1, kValidation = 2, kNumerical = 3, kIo = 4 };

}  // namespace sveb::cli
