#pragma once

#include <stdexcept>
#include <string>

namespace ltx {

// Process exit codes used by the CLI.
enum ExitCode : int {
  exit_ok = 0,
  exit_config = 2,
  exit_divergence = 3,
  exit_io = 4,
};

// Violated precondition or API misuse (shape mismatch, bad rate, ...).
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values or other numeric failures during computation.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed configuration (file or CLI).
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File and serialization failures, classified.
class io_error : public std::runtime_error {
 public:
  enum class Kind {
    bad_magic,
    bad_version,
    truncated,
    bad_value,
    not_found,
    write_failure,
  };

  io_error(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::bad_magic: return "bad_magic";
      case Kind::bad_version: return "bad_version";
      case Kind::truncated: return "truncated";
      case Kind::bad_value: return "bad_value";
      case Kind::not_found: return "not_found";
      case Kind::write_failure: return "write_failure";
    }
    return "unknown";
  }

 private:
  Kind kind_;
};

}  // namespace ltx
