#pragma once

#include <stdexcept>
#include <string>

namespace advr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array or graph shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity showed up where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or mismatched file contents.
class FormatError : public Error {
 public:
  enum class Kind {
    io,
    bad_magic,
    version_mismatch,
    hash_mismatch,
    checksum_mismatch,
    truncated,
    unsupported_encoding,
    empty_payload,
    spec_mismatch,
    syntax,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace advr
