#pragma once

#include <stdexcept>
#include <string>

namespace opgran {

// Error families map one-to-one onto CLI exit codes (see tools/opgran.cpp).

/// Invalid configuration file or option value. Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data is empty, malformed or degenerate for the requested metric. Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Several inputs disagree (record ids, labels). Exit code 4.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every request against the model endpoint failed. Exit code 5.
class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace opgran
