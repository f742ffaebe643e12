#pragma once

#include <stdexcept>
#include <string>

namespace funreg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (exit code 2 at the CLI).
class InputError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public InputError {
public:
    using InputError::InputError;
};

/// A point lies outside a functional domain.
class DomainError : public InputError {
public:
    using InputError::InputError;
};

class LookupError : public InputError {
public:
    using InputError::InputError;
};

class ParseError : public InputError {
public:
    using InputError::InputError;
};

class JoinError : public InputError {
public:
    using InputError::InputError;
};

class PreconditionError : public InputError {
public:
    using InputError::InputError;
};

/// Numerical breakdown: singular systems, non-finite results (exit code 3).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Too many failed bootstrap replicates, degenerate bands.
class InferenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateBandError : public InferenceError {
public:
    using InferenceError::InferenceError;
};

}  // namespace funreg
