#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aftn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or spatial sizes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced by a forward or backward pass.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (bad magic, missing header, truncation).
class FormatError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

class ParseError : public FormatError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : FormatError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace aftn
