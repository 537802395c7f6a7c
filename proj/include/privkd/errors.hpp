// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace privkd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A span or label annotation in a source corpus is inconsistent.
class CorruptAnnotation : public Error {
 public:
  using Error::Error;
};

/// A manifest, index or checkpoint file does not match its schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A cached file exists but its content cannot be trusted.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The generator backend failed permanently for a prompt.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// The remote generator answered with something that is not a valid image.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Raised by generate_all after persisting the partial index.
class GenerationFailed : public Error {
 public:
  GenerationFailed(const std::string& what, std::vector<std::string> failed_ids)
      : Error(what), failed_ids_(std::move(failed_ids)) {}

  const std::vector<std::string>& failed_ids() const noexcept { return failed_ids_; }

 private:
  std::vector<std::string> failed_ids_;
};

/// Training diverged or could not start.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace privkd
