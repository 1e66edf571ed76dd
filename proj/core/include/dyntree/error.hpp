// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dyntree {

/// Caller passed something outside an operation's domain.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An object was used in a state that its operation does not allow.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or inconsistent external data (model files, prompt files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An exact enumeration would exceed its configured size bound.
class GuardExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A statistical test was asked to run with too few samples to be valid.
class InsufficientSamples : public std::runtime_error {
 public:
  InsufficientSamples(const std::string& what, std::uint64_t required_n)
      : std::runtime_error(what), required_n_(required_n) {}

  std::uint64_t required_n() const noexcept { return required_n_; }

 private:
  std::uint64_t required_n_;
};

}  // namespace dyntree
