#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace difformer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A row that cannot be L2-normalized (norm at or below the guard).
class DegenerateRowError : public Error {
public:
    DegenerateRowError(std::size_t row, const std::string& what)
        : Error(what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

/// A row-normalization denominator that is zero or negative.
class NormalizationError : public Error {
public:
    NormalizationError(std::size_t row, const std::string& what)
        : Error(what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::string file, std::size_t line, const std::string& msg)
        : Error(file + ":" + std::to_string(line) + ": " + msg),
          file_(std::move(file)), line_(line) {}
    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

/// Requested functionality does not exist for the given kernel kind.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Argument outside the domain of a mathematical function.
class DomainError : public Error {
public:
    using Error::Error;
};

/// The autodiff tape is in an inconsistent state (foreign node, missing parameter).
class ConsistencyError : public Error {
public:
    using Error::Error;
};

}  // namespace difformer
