#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace floop {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration values (out-of-range knobs, unknown kinds, ...).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Malformed persisted data; carries a 1-based line number when known.
class SchemaError : public Error {
  public:
    explicit SchemaError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

class NonFiniteError : public Error {
  public:
    using Error::Error;
};

class InvalidControlError : public Error {
  public:
    using Error::Error;
};

class DuplicateIdError : public Error {
  public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
  public:
    using Error::Error;
};

class DimensionTooSmallError : public Error {
  public:
    using Error::Error;
};

class ZeroNormError : public Error {
  public:
    using Error::Error;
};

class ParseError : public Error {
  public:
    using Error::Error;
};

class MissingLabelError : public Error {
  public:
    using Error::Error;
};

class EmbeddingError : public Error {
  public:
    using Error::Error;
};

/// Transport or protocol failure talking to a model server.
class BackendError : public Error {
  public:
    explicit BackendError(const std::string& what, int status = 0)
        : Error(what), status_(status) {}
    /// HTTP status when one was received, 0 otherwise.
    int status() const { return status_; }

  private:
    int status_;
};

class TimeoutError : public BackendError {
  public:
    explicit TimeoutError(const std::string& what) : BackendError(what, 0) {}
};

class RangeError : public Error {
  public:
    using Error::Error;
};

class LengthMismatchError : public Error {
  public:
    using Error::Error;
};

class EmptyInputError : public Error {
  public:
    using Error::Error;
};

class OneClassOnlyError : public Error {
  public:
    using Error::Error;
};

}  // namespace floop
