#pragma once

#include <stdexcept>
#include <string>

namespace evalign {

// Categories map one-to-one onto CLI exit codes (see cli.hpp).
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) {
  throw Error(ErrorKind::usage, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorKind::numeric, msg);
}

}  // namespace evalign
