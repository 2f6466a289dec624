#pragma once

#include <stdexcept>
#include <string>

namespace wordlearn {

// Base of every error the library raises. The CLI maps the three kinds onto
// exit codes 1 (usage), 2 (data) and 3 (numerical).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace wordlearn
