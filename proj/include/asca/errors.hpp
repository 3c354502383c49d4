#pragma once

#include <stdexcept>
#include <string>

namespace asca {

// Base of every error raised by the library. The CLI maps UserError
// subclasses to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UserError : public Error {
public:
    using Error::Error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid hyperparameters or layer configuration.
class ConfigError : public UserError {
public:
    using UserError::UserError;
};

// An op produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

class DecodeError : public UserError {
public:
    using UserError::UserError;
};

class ParseError : public UserError {
public:
    using UserError::UserError;
};

class IoError : public UserError {
public:
    using UserError::UserError;
};

// Evaluation has nothing to score, e.g. no class with a positive label.
class EvaluationError : public UserError {
public:
    using UserError::UserError;
};

}  // namespace asca
