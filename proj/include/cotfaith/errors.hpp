#pragma once

#include <stdexcept>
#include <string>

namespace cotfaith {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad inputs: malformed records, out-of-range arguments, violated preconditions.
class ValidationError : public Error {
public:
  using Error::Error;
};

// Unreadable files / unparseable formats (corpus, tables, configs).
class ParseError : public Error {
public:
  using Error::Error;
};

class StoreError : public Error {
public:
  using Error::Error;
};

class BackendError : public Error {
public:
  BackendError(const std::string& msg, bool retryable)
      : Error(msg), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

private:
  bool retryable_;
};

// Network / transport problems; callers may retry.
class TransportError : public BackendError {
public:
  explicit TransportError(const std::string& msg) : BackendError(msg, true) {}
};

// Prompt does not fit the model context; retrying cannot help.
class ContextOverflowError : public BackendError {
public:
  explicit ContextOverflowError(const std::string& msg) : BackendError(msg, false) {}
};

// The backend does not support the requested operation (white-box access,
// parameter intervention, sequence scoring). Distinct from transport failures.
class CapabilityError : public BackendError {
public:
  explicit CapabilityError(const std::string& msg) : BackendError(msg, false) {}
};

}  // namespace cotfaith
