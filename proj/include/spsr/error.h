// Copyright 2026 The SPSR Authors.
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

#ifndef SPSR_ERROR_H_
#define SPSR_ERROR_H_

#include <stdexcept>
#include <string>

namespace spsr {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (wrong cell, wrong arity, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Index or coordinate outside the valid range.
class BoundsError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Operand shapes do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed serialized input (JSON schema, binary layout, RLE counts).
class FormatError : public Error {
 public:
  using Error::Error;
};

#define SPSR_CHECK(cond, ErrType, msg)                    \
  do {                                                    \
    if (!(cond)) throw ::spsr::ErrType(std::string(msg)); \
  } while (0)

}  // namespace spsr

#endif  // SPSR_ERROR_H_
