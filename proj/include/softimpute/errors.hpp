#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace softimpute {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (matrix dims, vector lengths, factor ranks).
class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// A precondition on an argument value was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Malformed text input. Carries the 1-based line number of the offending line
/// (0 when the problem is not tied to a single line, e.g. a missing entry).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// The thresholded SVD needed more singular triplets than the rank cap allows.
class RankCapExceeded : public Error {
public:
    using Error::Error;
};

}  // namespace softimpute
