#pragma once

#include <stdexcept>
#include <string>

namespace shapeforge {

// Every failure carries a stable machine-readable code ("corrupt_data",
// "unknown_modality", ...) next to the human message. The CLI prints the code,
// the service maps it onto an HTTP status.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

inline void require(bool condition, const char* code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace shapeforge
