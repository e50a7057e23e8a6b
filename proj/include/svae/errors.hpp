#pragma once

#include <stdexcept>
#include <string>

namespace svae {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// numerical failures (exit code 3 at the CLI)
class NumericalError : public Error {
public:
    using Error::Error;
};

class NotSPD : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NonFinite : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateDistribution : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class BoundaryError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// argument / shape errors
class DomainError : public Error {
public:
    using Error::Error;
};

class FamilyMismatch : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class DimMismatch : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

// I/O and configuration (exit code 2 at the CLI)
class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public ConfigError {
public:
    ParseError(const std::string& what, int line, int offset)
        : ConfigError(what + " (line " + std::to_string(line) + ", offset " +
                      std::to_string(offset) + ")"),
          line(line), offset(offset) {}
    int line;
    int offset;
};

class MagicMismatch : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class LengthError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

}  // namespace svae
