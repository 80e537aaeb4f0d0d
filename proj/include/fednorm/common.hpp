#pragma once

#include <stdexcept>

namespace fednorm {

// Shape mismatches, invalid dimensions, malformed configuration or input files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A generator exhausted its retry budget or a split left a required side empty.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The federation protocol contract was violated (empty reference set, zero weights).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: empty dataset, nonpositive time, missing constants.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fednorm
