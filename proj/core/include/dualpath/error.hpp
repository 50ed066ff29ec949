// Copyright 2026 The dualpath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace dualpath {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents or record shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed, or an undefined numeric operation
// (fully masked softmax row, cosine of a zero vector).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input data: files, manifests, checkpoints, configs.
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller violated an API contract that is not a shape problem.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace dualpath
