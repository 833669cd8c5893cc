#pragma once

#include <stdexcept>
#include <string>

namespace fidn {

// Base for every error raised by the library. The CLI maps the concrete
// subtypes onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed us something malformed: bad shape, bad config, bad label.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Shape mismatch between operands.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// On-disk data did not match the expected binary or text layout.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A loss or gradient became NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fidn
