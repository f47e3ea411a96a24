#pragma once

#include <stdexcept>
#include <string>

namespace wce {

enum class ErrorKind {
  InvalidInput,
  InvalidConfig,
  Parse,
  EmptyDataset,
  ZeroFrequency,
  EmptyForeground,
  Generation,
  Divergence,
  Io,
};

// All library failures are reported through this one exception type; the
// kind is what callers (the CLI exit-code mapping in particular) switch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace wce
