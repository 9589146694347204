#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lbast {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Phase-type parameters that violate the representation constraints.
class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

// No MErlang fit exists for the requested (SCV, f, k).
class InfeasibleFit : public Error {
 public:
  using Error::Error;
};

// Conditioning on an age whose survival probability is zero.
class VanishingSurvival : public Error {
 public:
  using Error::Error;
};

class InvalidMatrix : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// An iterative procedure stopped before reaching its tolerance.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}

  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

}  // namespace lbast
