#pragma once

#include <stdexcept>
#include <string>

namespace snode {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for arguments outside an operation's domain (bad shapes, orders, configs).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A state became non-finite or exceeded the blow-up threshold during integration.
class BlowUpError : public Error {
 public:
  BlowUpError(const std::string& what, double time) : Error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class StepLimitError : public Error {
 public:
  using Error::Error;
};

/// An intermediate SymNet value left the representable range.
class OverflowError : public Error {
 public:
  OverflowError(const std::string& what, int layer) : Error(what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace snode
