// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mobiletl {

/// Error categories. Each maps 1:1 onto an `mtl_status` code at the C boundary.
enum class ErrorKind {
  Shape,
  Value,
  State,
  Spec,
  Format,
  Policy,
  Config,
  Io,
  Audit,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MOBILETL_DEFINE_ERROR(Name, Kind)                                     \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

MOBILETL_DEFINE_ERROR(ShapeError, Shape)
MOBILETL_DEFINE_ERROR(ValueError, Value)
MOBILETL_DEFINE_ERROR(StateError, State)
MOBILETL_DEFINE_ERROR(SpecError, Spec)
MOBILETL_DEFINE_ERROR(FormatError, Format)
MOBILETL_DEFINE_ERROR(PolicyError, Policy)
MOBILETL_DEFINE_ERROR(ConfigError, Config)
MOBILETL_DEFINE_ERROR(IoError, Io)
MOBILETL_DEFINE_ERROR(AuditError, Audit)

#undef MOBILETL_DEFINE_ERROR

}  // namespace mobiletl
