#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pda {

/// Malformed or inconsistent configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input files, missing descriptions, inconsistent manifests. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary feature/checkpoint file that does not follow its layout.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// A lookup key (class, phase) that is absent from a table.
class KeyError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite activations or losses. CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// LLM answer that does not follow the phase-wise answer schema.
class DecompositionParseError : public std::runtime_error {
 public:
  DecompositionParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw_response() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// Failure reported by an LLM backend (transport, HTTP status, credentials).
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pda
