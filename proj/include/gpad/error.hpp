// Copyright 2026 The gpad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gpad {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Bad argument value or domain violation (negative variance, bad label, ...).
class ValueError : public Error {
  public:
    using Error::Error;
};

/// Non-finite intermediate produced by a tape node.
class NumericalError : public Error {
  public:
    NumericalError(std::size_t node, const std::string& what)
        : Error(what), node_(node) {}
    std::size_t node() const { return node_; }

  private:
    std::size_t node_;
};

/// Cholesky of a matrix that is not numerically positive definite.
class CholeskyError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

/// Optimizer or sampler failure (non-finite objective, divergent start).
class OptimizationError : public Error {
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

} // namespace gpad
