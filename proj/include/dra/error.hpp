/*
 * Copyright 2026 The DRA Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef DRA_ERROR_HPP
#define DRA_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dra {

// Error categories. The numeric values are part of the C API.
enum class ErrorCode : int {
  kOk = 0,
  kDimension = 1,
  kNumeric = 2,
  kFormat = 3,
  kConfig = 4,
  kContract = 5,
  kMismatch = 6,
  kIo = 7,
  kInternal = 8,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error(ErrorCode::kDimension, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorCode::kNumeric, m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error(ErrorCode::kFormat, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorCode::kConfig, m) {}
};

// A caller violated a documented precondition (bad label, bad axis, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error(ErrorCode::kContract, m) {}
};

class MismatchError : public Error {
 public:
  explicit MismatchError(const std::string& m) : Error(ErrorCode::kMismatch, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorCode::kIo, m) {}
};

}  // namespace dra

#endif  // DRA_ERROR_HPP
