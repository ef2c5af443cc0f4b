#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rsoc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed expression or config text. Line and column are 1-based.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t column)
        : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
          line_(line), column_(column), message_(what) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }
    [[nodiscard]] const std::string& message() const noexcept { return message_; }

private:
    std::size_t line_;
    std::size_t column_;
    std::string message_;
};

/// Expression evaluated outside its domain (log of a nonpositive value, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Numerical failure inside a solver: non-finite values, rank-deficient
/// regressions, CFL violations.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace rsoc
