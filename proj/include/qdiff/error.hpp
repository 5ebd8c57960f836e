#pragma once

#include <stdexcept>
#include <string>

namespace qdiff {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Violated precondition of an operation (bad index, missing gradient, ...).
class ContractError : public Error {
  public:
    using Error::Error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public ContractError {
  public:
    using ContractError::ContractError;
};

/// Malformed or unreadable input file. Messages carry the path and, where it
/// makes sense, the byte offset or entry name at fault.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Failure to read or write a file on disk.
class IoError : public Error {
  public:
    using Error::Error;
};

/// A numerical routine hit a degenerate case it refuses to paper over.
class NumericalError : public Error {
  public:
    using Error::Error;
};

/// Invalid command-line usage or run configuration.
class UsageError : public Error {
  public:
    using Error::Error;
};

/// Process exit codes used by the command-line frontend.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numerical = 3 };

} // namespace qdiff
