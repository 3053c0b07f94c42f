#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kecrs {

/// Base class for all library errors. `exit_code()` follows the CLI contract:
/// 2 for data/validation problems, 3 for numerical failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 2; }
};

class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ReferentialError : public Error {
    using Error::Error;
};

class LookupError : public Error {
    using Error::Error;
};

class ShapeError : public Error {
    using Error::Error;
};

class LinkingError : public Error {
    using Error::Error;
};

class IngestionError : public Error {
    using Error::Error;
};

class LengthError : public Error {
    using Error::Error;
};

class EventError : public Error {
    using Error::Error;
};

class DegenerateProjection : public Error {
    using Error::Error;
};

class EmptyInput : public Error {
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

}  // namespace kecrs
