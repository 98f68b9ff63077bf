#pragma once

#include <stdexcept>
#include <string>

namespace compass {

// Broad failure class; the CLI maps these onto exit codes 1/2/3.
enum class ErrorKind { config, data, backend };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Malformed input record. `line` is 1-based; 0 when not line-oriented.
class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what) : Error(ErrorKind::backend, what) {}
};

/// Connection-level failure. The only error class the embedder retries.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The backend does not offer the requested capability (e.g. no log-probs).
class CapabilityError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Error raised by an orchestrated run, tagged with the pipeline stage and (when known) the instance.
class StageError : public Error {
 public:
  StageError(ErrorKind kind, std::string stage, std::string instance_id, const std::string& message)
      : Error(kind, describe(stage, instance_id, message)),
        stage_(std::move(stage)),
        instance_id_(std::move(instance_id)),
        message_(message) {}

  [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
  [[nodiscard]] const std::string& instance_id() const noexcept { return instance_id_; }
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  static std::string describe(const std::string& stage, const std::string& instance_id, const std::string& message) {
    std::string out = "[" + stage + "]";
    if (!instance_id.empty()) out += " instance '" + instance_id + "'";
    return out + ": " + message;
  }

  std::string stage_;
  std::string instance_id_;
  std::string message_;
};

}  // namespace compass
