#pragma once

#include <stdexcept>
#include <string>

namespace anncache {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension or emptiness violations (mismatched matrix shapes, empty context).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// File-format and I/O failures (bad magic, truncated payload, unreadable path).
class IoError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A documented invariant of a domain type was violated by the caller.
class InvariantError : public Error {
public:
    using Error::Error;
};

}  // namespace anncache
