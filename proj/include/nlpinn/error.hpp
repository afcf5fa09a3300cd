#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlpinn {

//! Bad input to an operation (shape mismatch, out-of-range argument, ...).
class InvalidArgument : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

//! Base class for failures of the numerics rather than of the caller.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

//! A family has too few members to determine the six PD coefficients.
class OperatorUnderdetermined : public NumericalError {
  public:
    OperatorUnderdetermined(std::size_t point, std::size_t members);
    std::size_t point;
};

//! The weighted moment matrix of a family cannot be factored.
class SingularMomentMatrix : public NumericalError {
  public:
    SingularMomentMatrix(std::size_t point, double condition_estimate);
    std::size_t point;
    double condition_estimate;
};

//! Positive plastic strain with a vanishing deviatoric stress.
class DegenerateFlowDirection : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

//! One or more families failed during operator construction.
class OperatorSetError : public NumericalError {
  public:
    OperatorSetError(std::vector<std::size_t> points, const std::string& first_message);
    std::vector<std::size_t> points;
};

//! A NaN or Inf reached a value or an adjoint during differentiation.
class PoisonedGradient : public NumericalError {
  public:
    PoisonedGradient(const std::string& node_class, const std::string& detail);
    std::string node_class;
};

//! A higher-order derivative was requested from a first-order path.
class UnsupportedOrder : public InvalidArgument {
  public:
    using InvalidArgument::InvalidArgument;
};

//! Malformed input file; `line` is 1-based.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& file, std::size_t line, const std::string& what);
    std::size_t line;
};

//! Invalid run configuration (unknown key, type mismatch, duplicates).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace nlpinn
