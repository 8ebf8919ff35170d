#pragma once

#include <stdexcept>
#include <string>

namespace moeleak {

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidBatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CompositionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class BlockerUnavailable : public std::runtime_error {
 public:
  BlockerUnavailable(int expert, const std::string& what)
      : std::runtime_error(what), expert_(expert) {}
  int expert() const noexcept { return expert_; }

 private:
  int expert_;
};

class PositionUndefined : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnrecoverablePath : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace moeleak
