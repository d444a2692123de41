/*
 * Copyright 2026 The knowsel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace knowsel {

// Base of every error raised by the library. The subclasses map onto the
// error kinds used across modules so callers (notably the CLI) can translate
// them into exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition on the caller's side was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A request would exceed a hard size limit.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Malformed input text; the message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input with the wrong fields.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Record content that breaks a data invariant (e.g. empty context).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or unusable input data files.
class DataError : public Error {
 public:
  using Error::Error;
};

// A checkpoint's vocabulary cannot serve the data it is asked to score.
class VocabMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace knowsel
