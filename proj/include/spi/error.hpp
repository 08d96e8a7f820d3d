#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spi {

enum class ErrorKind {
  InvalidInput,
  InvalidTemperature,
  DegenerateEmbedding,
  ShapeMismatch,
  InvalidK,
  InvalidClass,
  DegenerateBatch,
  InvalidViewCount,
  NonFiniteLoss,
  NonFiniteGradient,
  InvalidThreshold,
  InconsistentState,
  MissingClass,
  EmptyUnlabeledSet,
  InvalidEpoch,
  InvalidSpec,
  StorageError,
  ParseError,
  EmptyTestSet,
  ConfigError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidTemperature: return "InvalidTemperature";
    case ErrorKind::DegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidK: return "InvalidK";
    case ErrorKind::InvalidClass: return "InvalidClass";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::InvalidViewCount: return "InvalidViewCount";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::InvalidThreshold: return "InvalidThreshold";
    case ErrorKind::InconsistentState: return "InconsistentState";
    case ErrorKind::MissingClass: return "MissingClass";
    case ErrorKind::EmptyUnlabeledSet: return "EmptyUnlabeledSet";
    case ErrorKind::InvalidEpoch: return "InvalidEpoch";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::StorageError: return "StorageError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyTestSet: return "EmptyTestSet";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

// All library failures surface as spi::Error; kind() is the stable contract,
// what() carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace spi
