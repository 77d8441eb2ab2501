#pragma once

#include <stdexcept>
#include <string>

namespace rntk {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-range numeric input.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Mismatched lengths, ragged rows, empty inputs.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Two Gram pairs that cannot be summed into a bidirectional kernel.
class CompositionError : public Error {
public:
    using Error::Error;
};

/// Malformed dataset, split sidecar or Gram file.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid oracle or solver configuration (zero width, fewer than two trials, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Binary SVM problem with a single class present.
class DegenerateProblem : public Error {
public:
    using Error::Error;
};

/// SMO hit its iteration cap.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace rntk
