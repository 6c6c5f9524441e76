// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace unisign {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define UNISIGN_DEFINE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

UNISIGN_DEFINE_ERROR(MalformedFile);
UNISIGN_DEFINE_ERROR(EmptyClip);
UNISIGN_DEFINE_ERROR(IndexOutOfRange);
UNISIGN_DEFINE_ERROR(ConfigMismatch);
UNISIGN_DEFINE_ERROR(ShapeError);
UNISIGN_DEFINE_ERROR(GroupMissing);
UNISIGN_DEFINE_ERROR(LengthMismatch);
UNISIGN_DEFINE_ERROR(DecodeError);
UNISIGN_DEFINE_ERROR(EmptyTarget);
UNISIGN_DEFINE_ERROR(MissingPrereqCheckpoint);
UNISIGN_DEFINE_ERROR(DivergedLoss);
UNISIGN_DEFINE_ERROR(MissingAnnotation);
UNISIGN_DEFINE_ERROR(UnsupportedTask);
UNISIGN_DEFINE_ERROR(EmptyReference);
UNISIGN_DEFINE_ERROR(EmptyInput);
UNISIGN_DEFINE_ERROR(EmptyCorpus);
UNISIGN_DEFINE_ERROR(ConfigError);

#undef UNISIGN_DEFINE_ERROR

namespace detail {
[[noreturn]] inline void throw_shape(const std::string& what) { throw ShapeError(what); }
}  // namespace detail

}  // namespace unisign
