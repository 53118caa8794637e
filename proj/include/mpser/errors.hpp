#pragma once

#include <stdexcept>
#include <string>

namespace mpser {

// Shape incompatibility between tensor operands. The message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// A caller violated an operation precondition (empty batch, non-scalar
// objective, overlapping splits, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// File parsing / serialization failures. Carries file context in the message.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Configuration errors name the offending key so CLI messages stay actionable.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mpser
