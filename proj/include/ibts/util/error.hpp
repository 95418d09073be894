#pragma once

#include <stdexcept>
#include <string>

namespace ibts {

// Base exception. `code()` is a short machine-readable tag such as
// "layout.parse" or "cli.missing_checkpoint".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace ibts
