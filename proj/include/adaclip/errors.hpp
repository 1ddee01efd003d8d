#pragma once

#include <stdexcept>
#include <string>

namespace adaclip {

// Error taxonomy shared by every module. The CLI maps UsageError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, zero-norm vectors and other numerically undefined inputs.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated an API contract (wrong shapes, missing gradients, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad user data: wrong image extents, non-binary masks, oversize text.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed files (PGM headers, checkpoints, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem and other environment failures.
class EnvironmentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given labels (e.g. AUROC with one class).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace adaclip
