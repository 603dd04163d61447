#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spoof {

enum class ErrorKind {
  InvalidDimension,
  Index,
  Shape,
  Format,
  UnsupportedFormat,
  Configuration,
  Transport,
  Protocol,
  NotFound,
  Unsupported,
  Capacity,
  Validation,
  EmptyInput,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDimension: return "invalid dimension";
    case ErrorKind::Index: return "index error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::UnsupportedFormat: return "unsupported format";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::Transport: return "transport error";
    case ErrorKind::Protocol: return "protocol error";
    case ErrorKind::NotFound: return "not found";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Capacity: return "capacity error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace spoof
