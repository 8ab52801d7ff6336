#pragma once

#include <stdexcept>
#include <string>

namespace vitsvm {

// Base for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not compose.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A caller broke a documented precondition (non-scalar loss, malformed one-hot, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// A numeric hyperparameter is out of range.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Configuration rejected before any work starts.
class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or failed verification during a run.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace vitsvm
