#pragma once

#include <stdexcept>
#include <string>

namespace xinv {

// Error codes are stable strings so the CLI can emit machine-readable
// failures ({"error": code, "message": ...} on stderr).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

inline Error io_error(const std::string& msg) { return Error("io", msg); }
inline Error validation_error(const std::string& msg) { return Error("validation", msg); }
inline Error config_error(const std::string& msg) { return Error("config", msg); }
inline Error shape_error(const std::string& msg) { return Error("shape", msg); }
inline Error prerequisite_error(const std::string& msg) { return Error("prerequisite", msg); }
inline Error divergence_error(const std::string& msg) { return Error("divergence", msg); }
inline Error unsupported_error(const std::string& msg) { return Error("unsupported", msg); }

}  // namespace xinv
