#pragma once

#include <stdexcept>
#include <string>

namespace raildelay {

// Invariant violated while constructing a domain type. The message names the
// violated rule.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent input data (files, trips, weather coverage).
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Overflow, singular matrices, degenerate likelihoods.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace raildelay
