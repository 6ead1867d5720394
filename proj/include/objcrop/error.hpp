#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace objcrop {

// Exception hierarchy. The CLI maps each family onto a stable exit code:
// ValidationError -> 1, MissingDataError -> 2, anything else -> 3.

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input violates a type invariant or a precondition.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Feature cache could not be decoded.
class CodecError : public Error {
public:
  enum class Kind { bad_magic, truncated, dimension_mismatch, invalid_record, io };

  CodecError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

/// Data required by a run is absent (feature keys, box sources).
class MissingDataError : public Error {
public:
  MissingDataError(const std::string& what, std::vector<std::string> missing = {})
      : Error(what), missing_(std::move(missing)) {}

  const std::vector<std::string>& missing() const noexcept { return missing_; }

private:
  std::vector<std::string> missing_;
};

}  // namespace objcrop
