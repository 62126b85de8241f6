#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gmpar {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GMPAR_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

// hierarchy
GMPAR_DEFINE_ERROR(EmptyLevels)
GMPAR_DEFINE_ERROR(NonDivisibleLevels)
GMPAR_DEFINE_ERROR(OutOfRange)
GMPAR_DEFINE_ERROR(DimensionMismatch)

// transform
GMPAR_DEFINE_ERROR(IndexOutOfLevel)
GMPAR_DEFINE_ERROR(LeafHasNoChildren)

// autodiff
GMPAR_DEFINE_ERROR(ShapeMismatch)
GMPAR_DEFINE_ERROR(NonScalarLoss)

// gmp
GMPAR_DEFINE_ERROR(InsufficientHistory)
GMPAR_DEFINE_ERROR(NonFiniteLoss)
GMPAR_DEFINE_ERROR(FormatError)

// reconcile
GMPAR_DEFINE_ERROR(SingularSystem)
GMPAR_DEFINE_ERROR(MissingHistory)
GMPAR_DEFINE_ERROR(InvalidWeights)

// taskopt
GMPAR_DEFINE_ERROR(Infeasible)

// metrics
GMPAR_DEFINE_ERROR(LengthMismatch)
GMPAR_DEFINE_ERROR(TooShort)

// harness
GMPAR_DEFINE_ERROR(MissingColumn)
GMPAR_DEFINE_ERROR(EmptySeries)
GMPAR_DEFINE_ERROR(InsufficientData)
GMPAR_DEFINE_ERROR(ConfigError)

#undef GMPAR_DEFINE_ERROR

/// Malformed numeric input; carries the 1-based line number of the offending row.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace gmpar
