/* Copyright 2026 The partlang Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef PARTLANG_ERROR_HPP_
#define PARTLANG_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace partlang {

// Error categories. The service maps these onto HTTP status codes and the
// CLI maps all of them onto exit status 1.
enum class ErrorKind {
  kFormat,      // input does not parse
  kValidation,  // parses, but violates an invariant
  kNotFound,
  kConflict,
  kShape,       // matrix dimensions do not chain
  kNumeric,     // non-finite values
  kConfig,      // missing provider / bad configuration
  kInput,       // undecodable image or unreadable file
  kProvider,    // encoder backend failure
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define PARTLANG_DEFINE_ERROR(Name, Kind)                        \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& message)                    \
        : Error(ErrorKind::Kind, message) {}                     \
  };

PARTLANG_DEFINE_ERROR(FormatError, kFormat)
PARTLANG_DEFINE_ERROR(ValidationError, kValidation)
PARTLANG_DEFINE_ERROR(NotFoundError, kNotFound)
PARTLANG_DEFINE_ERROR(ConflictError, kConflict)
PARTLANG_DEFINE_ERROR(ShapeError, kShape)
PARTLANG_DEFINE_ERROR(NumericError, kNumeric)
PARTLANG_DEFINE_ERROR(ConfigError, kConfig)
PARTLANG_DEFINE_ERROR(InputError, kInput)
PARTLANG_DEFINE_ERROR(ProviderError, kProvider)

#undef PARTLANG_DEFINE_ERROR

}  // namespace partlang

#endif  // PARTLANG_ERROR_HPP_
