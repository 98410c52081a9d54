#pragma once

#include <stdexcept>
#include <string>

namespace toolqp {

enum class ErrorCode {
  kIo,
  kParse,
  kInvalidArgument,
  kBackend,
  kProtocol,
  kInternal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace toolqp
