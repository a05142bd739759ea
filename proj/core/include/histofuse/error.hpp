#pragma once

#include <stdexcept>
#include <string>

namespace histofuse {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: violated precondition, malformed file, unknown name.
/// The command-line tool maps this to exit code 1.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed to produce a usable result (non-finite loss,
/// Cholesky breakdown, solver cap reached).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace histofuse
