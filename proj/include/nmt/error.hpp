#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

// All library failures derive from Error and carry a short machine-greppable
// class tag. The CLI prints `error[<tag>]: <message>` and maps tags to exit
// codes.
class Error : public std::runtime_error {
 public:
  Error(std::string tag, const std::string& msg)
      : std::runtime_error(msg), tag_(std::move(tag)) {}
  const std::string& tag() const { return tag_; }

 private:
  std::string tag_;
};

class DimError : public Error {
 public:
  explicit DimError(const std::string& msg) : Error("shape", msg) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& msg) : Error("index", msg) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error("input", msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

}  // namespace nmt
