// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mpgd {

/// Base error for every failure the library reports.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad command-line usage or invalid user-supplied flag values (exit code 1).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

/// A hard theory assertion (descent lemma / rate bound) failed (exit code 3).
class TheoryError : public Error {
 public:
  explicit TheoryError(const std::string& what) : Error(what) {}
};

}  // namespace mpgd
