// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace salkv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

/// Non-finite values (NaN/Inf) detected in an input or an intermediate.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class IndexError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "index"; }
};

class ArgumentError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "argument"; }
};

/// A chunk cannot fit in the cache even after evicting every unpinned entry.
class CapacityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "capacity"; }
};

/// Malformed tensor file; the message carries the byte offset of the fault.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

}  // namespace salkv
