// Copyright 2026 The divemb Authors.
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

#ifndef DIVEMB_ERROR_H_
#define DIVEMB_ERROR_H_

#include <stdexcept>
#include <string>

namespace divemb {

// Error categories map onto the CLI exit codes: validation problems (shape,
// config) exit with 1, numeric failures with 2 and I/O failures with 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

// Raised when a tape is replayed inconsistently; always a programming bug.
class InternalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

}  // namespace divemb

#endif  // DIVEMB_ERROR_H_
