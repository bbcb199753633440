// Copyright 2026 The ssflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace ssflow {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or descriptor widths disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Neighbor query preconditions (k larger than the reference set, ...).
class QueryError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (backward on a non-scalar, bad label set, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file or IO failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A stored artifact does not match the model it is loaded into.
class ArtifactMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace ssflow
