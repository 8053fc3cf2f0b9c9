#pragma once

#include <stdexcept>
#include <string>

namespace eli {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument values (probabilities outside [0,1], sizes, bounds).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message names the offending line.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// The requested design, pilot or estimator has no feasible solution.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// An exposure cell required by a difference-in-means scheme is empty.
class InfeasibleWeightsError : public InfeasibleError {
 public:
  using InfeasibleError::InfeasibleError;
};

/// Most posterior completions of a partially observed network leave the
/// assignment without valid estimator weights.
class DegenerateAssignmentError : public InfeasibleError {
 public:
  using InfeasibleError::InfeasibleError;
};

/// The data do not identify a requested parameter (rank deficiency).
class IdentificationError : public Error {
 public:
  using Error::Error;
};

/// Singular or badly conditioned Gram matrix.
class IllPosedError : public Error {
 public:
  using Error::Error;
};

/// A variance model evaluated outside its domain (negative variance, bad PSD repair).
class ModelDomainError : public Error {
 public:
  using Error::Error;
};

/// Zero or negative variance where a strictly positive one is required.
class DegenerateVarianceError : public Error {
 public:
  using Error::Error;
};

class UnsupportedSchemeError : public Error {
 public:
  using Error::Error;
};

}  // namespace eli
